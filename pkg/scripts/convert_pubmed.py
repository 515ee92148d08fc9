#!/usr/bin/env python3
"""Convert the PubMed diabetes NLM-format tab files into the .content /
.cites layout the citation loader expects.

Input layout (Pubmed-Diabetes distribution):
  NODE file   line 1: header, line 2: tab-separated attribute
              declarations ("numeric:w-<word>:0.0" entries fix the feature
              column order), then one line per paper:
              "<pid>\tlabel=<k>\tw-<word>=<tfidf>...\tsummary=..."
  CITES file  two header lines, then "<edge id>\tpaper:<pid>\t|\tpaper:<pid>"

Output: "<pid>\t<f_1>..<f_d>\t<label>" content lines (absent words are 0)
and "<pid>\t<pid>" cite lines.

Usage: convert_pubmed.py NODE_FILE CITES_FILE OUT_CONTENT OUT_CITES
"""

import argparse
import sys


def convert(node_path, cites_path, content_path, out_cites_path):
    with open(node_path, "r", encoding="utf-8") as fh:
        fh.readline()
        declarations = fh.readline().rstrip("\n").split("\t")
        vocabulary = [
            entry.split(":")[1] for entry in declarations if entry.startswith("numeric:")
        ]
        column = {word: i for i, word in enumerate(vocabulary)}
        n_nodes = 0
        with open(content_path, "w", encoding="utf-8") as out:
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                if len(parts) < 2:
                    continue
                pid = parts[0]
                label = None
                values = [0.0] * len(vocabulary)
                for token in parts[1:]:
                    key, _, value = token.partition("=")
                    if key == "label":
                        label = value
                    elif key in column:
                        values[column[key]] = float(value)
                if label is None:
                    raise SystemExit(f"paper {pid}: no label attribute")
                feats = "\t".join(repr(v) if v else "0" for v in values)
                out.write(f"{pid}\t{feats}\t{label}\n")
                n_nodes += 1

    n_edges = 0
    with open(cites_path, "r", encoding="utf-8") as fh, open(
        out_cites_path, "w", encoding="utf-8"
    ) as out:
        fh.readline()
        fh.readline()
        for line in fh:
            parts = line.split()
            papers = [p.split(":", 1)[1] for p in parts if p.startswith("paper:")]
            if len(papers) != 2:
                continue
            out.write(f"{papers[0]}\t{papers[1]}\n")
            n_edges += 1
    return n_nodes, n_edges


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("node_file")
    parser.add_argument("cites_file")
    parser.add_argument("out_content")
    parser.add_argument("out_cites")
    args = parser.parse_args(argv)
    nodes, edges = convert(args.node_file, args.cites_file, args.out_content, args.out_cites)
    print(f"wrote {nodes} content lines and {edges} cite lines")
    return 0


if __name__ == "__main__":
    sys.exit(main())
