"""How the Dirichlet concentration parameter shapes client label skew.

Partitions one 10-class training set across 20 clients at several alpha
values and prints each client's class histogram as a text bar chart plus
its label entropy. Small alpha concentrates each client on one or two
classes; large alpha approaches an even split.

Usage: python3 partition_gallery.py [--seed N] [--alphas 0.01,0.1,1,100]
"""

import argparse

import numpy as np

import fedfusion as ff

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--alphas", default="0.01,0.1,1,100")
parser.add_argument("--clients", type=int, default=20)
args = parser.parse_args()
alphas = [float(a) for a in args.alphas.split(",")]

classes = 10
labels = np.repeat(np.arange(classes), 200)

for alpha in alphas:
    spec = ff.PartitionSpec(alpha, args.clients, args.seed)
    shards = ff.dirichlet_partition(labels, spec)
    entropies = [ff.label_entropy(labels[ix], classes) for ix in shards]
    print(f"\nalpha = {alpha:g}   mean shard entropy {np.mean(entropies):.3f} nats "
          f"(uniform would be {np.log(classes):.3f})")
    print("client  size  entropy  class histogram")
    for k, ix in enumerate(shards):
        hist = np.bincount(labels[ix], minlength=classes)
        bar = "".join(str(min(int(c) // 10, 9)) if c else "." for c in hist)
        print(f"{k:>6}  {len(ix):>4}  {entropies[k]:.3f}   [{bar}]")
