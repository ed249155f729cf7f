#!/usr/bin/env python3
"""Parameter count and serialized size of the reference model under each storage plan."""

import argparse
import json

from streamse.verify import model_sizes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    print(json.dumps(model_sizes(ap.parse_args().seed), indent=1))


if __name__ == "__main__":
    main()
