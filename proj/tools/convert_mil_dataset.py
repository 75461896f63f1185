#!/usr/bin/env python3
"""Convert multi-instance datasets to the bag CSV layout read by `mivae`.

Output columns: bag_id,label,instance_label,f0,...,f{d-1}

Supported input formats:
  label-bag-csv   headerless rows "bag_label,bag_id,f1,...,fd" (e.g. the musk1.csv
                  shipped with the `mil` Python package)
  uci-musk        UCI clean1.data / clean2.data rows
                  "molecule,conformation,f1,...,f166,class"
  mill-sparse     MILL / SVMlight-style rows
                  "instance_id:bag_id:label idx:value idx:value ..."
                  (label is the instance label; bag label = OR of instance labels;
                  the instance labels are kept unless --no-instance-labels)
"""

import argparse
import collections
import csv
import sys


def read_label_bag_csv(path):
    bags = collections.OrderedDict()
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            label, bag_id, feats = row[0].strip(), row[1].strip(), row[2:]
            bags.setdefault(bag_id, {"label": label, "rows": []})
            if bags[bag_id]["label"] != label:
                sys.exit(f"{path}:{line_no}: bag {bag_id} has inconsistent labels")
            bags[bag_id]["rows"].append((None, [float(v) for v in feats]))
    return bags


def read_uci_musk(path):
    bags = collections.OrderedDict()
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip().rstrip(".")
            if not line:
                continue
            parts = line.split(",")
            bag_id, feats, label = parts[0], parts[2:-1], str(int(float(parts[-1])))
            bags.setdefault(bag_id, {"label": label, "rows": []})
            if bags[bag_id]["label"] != label:
                sys.exit(f"{path}:{line_no}: bag {bag_id} has inconsistent labels")
            bags[bag_id]["rows"].append((None, [float(v) for v in feats]))
    return bags


def read_mill_sparse(path, keep_instance_labels):
    raw = collections.OrderedDict()
    max_index = 0
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            head, *pairs = line.split()
            fields = head.split(":")
            if len(fields) != 3:
                sys.exit(f"{path}:{line_no}: expected instance_id:bag_id:label")
            _, bag_id, label = fields
            label = 1 if float(label) > 0 else 0
            sparse = {}
            for pair in pairs:
                idx, val = pair.split(":")
                idx = int(idx)
                max_index = max(max_index, idx)
                sparse[idx] = float(val)
            raw.setdefault(bag_id, []).append((label, sparse))
    # Indices may be 0- or 1-based; keep a dense column per used index.
    min_index = min((i for rows in raw.values() for _, s in rows for i in s), default=0)
    dim = max_index - min_index + 1
    bags = collections.OrderedDict()
    for bag_id, rows in raw.items():
        bag_label = "1" if any(l for l, _ in rows) else "0"
        out_rows = []
        for label, sparse in rows:
            dense = [0.0] * dim
            for i, v in sparse.items():
                dense[i - min_index] = v
            out_rows.append((str(label) if keep_instance_labels else None, dense))
        bags[bag_id] = {"label": bag_label, "rows": out_rows}
    return bags


def write_bag_csv(bags, out):
    dims = {len(f) for b in bags.values() for _, f in b["rows"]}
    if len(dims) != 1:
        sys.exit(f"ragged feature rows: widths {sorted(dims)}")
    (dim,) = dims
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["bag_id", "label", "instance_label"] + [f"f{k}" for k in range(dim)])
    for bag_id, bag in bags.items():
        for inst_label, feats in bag["rows"]:
            writer.writerow([bag_id, bag["label"], "" if inst_label is None else inst_label] + [repr(v) for v in feats])
    return len(bags), dim, sum(len(b["rows"]) for b in bags.values())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--format", required=True, choices=["label-bag-csv", "uci-musk", "mill-sparse"])
    ap.add_argument("--prefix", default="", help="prepended to every bag id")
    ap.add_argument("--no-instance-labels", action="store_true")
    ap.add_argument("input")
    ap.add_argument("output")
    args = ap.parse_args()

    if args.format == "label-bag-csv":
        bags = read_label_bag_csv(args.input)
    elif args.format == "uci-musk":
        bags = read_uci_musk(args.input)
    else:
        bags = read_mill_sparse(args.input, not args.no_instance_labels)
    if args.prefix:
        bags = collections.OrderedDict((args.prefix + k, v) for k, v in bags.items())
    with open(args.output, "w", newline="") as out:
        m, d, n = write_bag_csv(bags, out)
    print(f"{args.output}: {m} bags, {n} instances, d={d}", file=sys.stderr)


if __name__ == "__main__":
    main()
