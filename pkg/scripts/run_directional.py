"""Long directional run: H={1} vs H={1,15}, 500 epochs, three seeds, default synthetic data.

Results land in results/ keyed by configuration and source fingerprint; the
acceptance suite reads them from there. Seeds already cached are skipped.
"""
import argparse
import logging
import sys
from pathlib import Path

from horizon_gnn.experiments import cached_directional
from horizon_gnn.synthetic import SyntheticConfig
from horizon_gnn.train import TrainConfig

# hidden width 16 keeps three seeds of both models within a few CPU hours
DIRECTIONAL_TRAIN = TrainConfig(epochs=500, hidden=16, batch_size=8)
DIRECTIONAL_DATA = SyntheticConfig()
RESULTS = Path(__file__).resolve().parent.parent / "results"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default=str(RESULTS))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    for rec in cached_directional(args.out, DIRECTIONAL_DATA, DIRECTIONAL_TRAIN, seeds):
        print(f"seed {rec['seed']}: {rec['n_wins']}/4 wins  "
              f"H=1 {rec['baseline']['pooled']}  H=1,15 {rec['multi']['pooled']}")


if __name__ == "__main__":
    main()
