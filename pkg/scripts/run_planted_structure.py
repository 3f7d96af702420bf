#!/usr/bin/env python3
"""Planted-structure experiment: can learned auxiliary tags beat coarse
human tags for response prediction?

Generates a synthetic world whose responses depend on hidden sub-skills,
trains the sparse-code model, exports its auxiliary tags, and compares
test AUC of BKT / BKT+aux / DKT / DKT+aux / sparse-code KT.
"""

import argparse
import time

from auxkt import bkt as B
from auxkt import data as D
from auxkt import dkt as K
from auxkt import sparse_kt as S


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--students", type=int, default=600)
    ap.add_argument("--exercises", type=int, default=120)
    ap.add_argument("--visible-kcs", type=int, default=10)
    ap.add_argument("--hidden-subskills", type=int, default=25)
    ap.add_argument("--seq-len", type=int, default=80)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--max-epochs", type=int, default=30)
    ap.add_argument("--bkt-epochs", type=int, default=30)
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args()

    t0 = time.time()
    ds, _ = D.generate_synthetic(
        args.students, args.exercises, args.visible_kcs,
        args.hidden_subskills, args.seq_len, seed=args.seed,
    )
    train, val, test = D.split_dataset(ds, seed=args.seed)
    print(f"dataset: {ds.n_interactions()} interactions, "
          f"{len(ds.sequences)} sequences, {ds.n_kcs} visible tags "
          f"({time.time() - t0:.1f}s)")
    log = print if args.verbose else None

    t = time.time()
    sparse_cfg = S.SparseKtConfig(max_epochs=args.max_epochs)
    sparse, hist = S.train_sparse(train, val, sparse_cfg, seed=args.seed, log=log)
    sparse_auc = sparse.evaluate_auc(test)
    print(f"sparse-code KT: test AUC {sparse_auc:.4f} "
          f"({len(hist)} epochs, {time.time() - t:.1f}s)")

    aux = sparse.aux_sets()
    sizes = [len(v) for v in aux.values()]
    print(f"aux tags: mean {sum(sizes) / len(sizes):.2f} per exercise, "
          f"{sum(1 for v in sizes if v == 0)} empty")

    t = time.time()
    dkt_cfg = K.DktConfig(max_epochs=args.max_epochs)
    dkt, hist = K.train_dkt(train, val, dkt_cfg, seed=args.seed, log=log)
    dkt_auc = dkt.evaluate_auc(test)
    print(f"DKT:            test AUC {dkt_auc:.4f} ({len(hist)} epochs, {time.time() - t:.1f}s)")

    aug = D.augment_with_aux(ds, aux, n_aux=sparse.cfg.n_aux)
    train_a, val_a, test_a = D.split_dataset(aug, seed=args.seed)
    t = time.time()
    dkt_aux, hist = K.train_dkt(train_a, val_a, dkt_cfg, seed=args.seed, log=log)
    dkt_aux_auc = dkt_aux.evaluate_auc(test_a)
    print(f"DKT+aux:        test AUC {dkt_aux_auc:.4f} ({len(hist)} epochs, {time.time() - t:.1f}s)")

    bkt_cfg = B.BktTrainConfig(epochs=args.bkt_epochs)
    t = time.time()
    bkt, _ = B.train_bkt(train, bkt_cfg, seed=args.seed)
    bkt_auc = B.evaluate_auc(bkt, test)
    print(f"BKT:            test AUC {bkt_auc:.4f} ({time.time() - t:.1f}s)")

    t = time.time()
    bkt_aux, _ = B.train_bkt(train_a, bkt_cfg, seed=args.seed)
    bkt_aux_auc = B.evaluate_auc(bkt_aux, test_a)
    print(f"BKT+aux:        test AUC {bkt_aux_auc:.4f} ({time.time() - t:.1f}s)")

    print("\nmargins:")
    print(f"  sparse - DKT   = {sparse_auc - dkt_auc:+.4f}")
    print(f"  BKT+aux - BKT  = {bkt_aux_auc - bkt_auc:+.4f}")
    print(f"  DKT+aux - DKT  = {dkt_aux_auc - dkt_auc:+.4f}")
    print(f"total {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
