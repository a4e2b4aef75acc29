"""Write every experiment preset as a YAML config usable with ``hcp --config``."""
from __future__ import annotations

import argparse

from hcp.presets import write_presets


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="configs")
    args = p.parse_args()
    for path in write_presets(args.out_dir):
        print(path)


if __name__ == "__main__":
    main()
