"""Command-line pipeline: data generation, training, extraction, recommendation.

Every subcommand accepts a plain ``key = value`` config file plus
overriding flags, derives all randomness from one root seed, writes a
metrics file with deterministic formatting, and records a manifest
(resolved options + input/output hashes) sufficient to reproduce the
run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bkt as B
from . import data as D
from . import dkt as K
from . import planner as P
from . import policy as PL
from . import sparse_kt as S
from .metrics import auc
from .simenv import EnvConfig, SimEnv
from .util import format_float, read_kv_file, rng_for, sha256_file, write_kv_file


class CliError(ValueError):
    pass


REQUIRED = object()

# (dest, type, default, help) per subcommand; dest doubles as the config key
OPTIONS = {
    "gen-synthetic": [
        ("out_dir", str, REQUIRED, "output directory"),
        ("students", int, 600, "number of simulated students"),
        ("exercises", int, 120, "exercise pool size"),
        ("visible_kcs", int, 10, "visible skill tags"),
        ("hidden_subskills", int, 25, "hidden sub-skills (>= 2x visible recommended)"),
        ("seq_len", int, 80, "interactions per student"),
        ("seed", int, 1, "root seed"),
        ("inert_area_frac", float, 0.0, "fraction of tag areas that start mastered"),
        ("student_jitter", float, 0.15, "per-student parameter jitter"),
    ],
    "train": [
        ("model", str, REQUIRED, "bkt | dkt | sbrkt | ppo"),
        ("data", str, REQUIRED, "interaction CSV"),
        ("out_dir", str, REQUIRED, "output directory"),
        ("seed", int, 0, "root seed (also drives the 80/10/10 split)"),
        ("aux", str, None, "auxiliary tag CSV to augment with"),
        ("lr", float, None, "learning rate (model default if unset)"),
        ("batch_size", int, None, "sequences per batch"),
        ("epochs", int, None, "bkt epochs"),
        ("max_epochs", int, None, "dkt/sbrkt epoch cap"),
        ("patience", int, None, "early-stopping patience"),
        ("emb_dim", int, None, "embedding width"),
        ("hidden_dim", int, None, "recurrent width"),
        ("n_aux", int, None, "sbrkt code slots"),
        ("c_max", int, None, "sbrkt max active code bits"),
        ("ground_truth", str, None, "ground-truth JSON (ppo only)"),
        ("horizon", int, 140, "episode length (ppo only)"),
        ("iterations", int, 150, "ppo update iterations"),
        ("n_envs", int, 8, "ppo parallel episodes"),
        ("reward_mode", str, "threshold", "threshold | mean_prob (ppo only)"),
        ("verbose", int, 0, "print per-epoch progress"),
    ],
    "extract-aux": [
        ("checkpoint", str, REQUIRED, "sbrkt checkpoint (.npz)"),
        ("out", str, REQUIRED, "auxiliary tag CSV to write"),
    ],
    "augment-train": [
        ("model", str, REQUIRED, "bkt | dkt"),
        ("data", str, REQUIRED, "interaction CSV"),
        ("aux", str, REQUIRED, "auxiliary tag CSV"),
        ("out_dir", str, REQUIRED, "output directory"),
        ("seed", int, 0, "root seed"),
        ("lr", float, None, "learning rate"),
        ("batch_size", int, None, "sequences per batch"),
        ("epochs", int, None, "bkt epochs"),
        ("max_epochs", int, None, "dkt epoch cap"),
        ("patience", int, None, "early-stopping patience"),
        ("emb_dim", int, None, "embedding width"),
        ("hidden_dim", int, None, "recurrent width"),
    ],
    "eval": [
        ("checkpoint", str, REQUIRED, "model checkpoint (.npz or bkt .csv)"),
        ("data", str, REQUIRED, "interaction CSV"),
        ("out_dir", str, REQUIRED, "output directory"),
        ("seed", int, 0, "split seed"),
        ("split", str, "test", "train | val | test | all"),
        ("aux", str, None, "auxiliary tag CSV (for models trained on augmented data)"),
    ],
    "recommend": [
        ("algorithm", str, REQUIRED, "random | expectimax | expectimax-dual | ppo"),
        ("ground_truth", str, REQUIRED, "ground-truth JSON"),
        ("out_dir", str, REQUIRED, "output directory"),
        ("data", str, None, "interaction CSV (tag universe for planners)"),
        ("checkpoint", str, None, "KT model (expectimax) or policy (ppo) checkpoint"),
        ("aux_checkpoint", str, None, "aux-universe DKT checkpoint (dual with DKT pair)"),
        ("aux", str, None, "auxiliary tag CSV (dual with DKT pair)"),
        ("students", int, 24, "simulated students"),
        ("horizon", int, 140, "episode length"),
        ("reward_mode", str, "threshold", "threshold | mean_prob"),
        ("seed", int, 0, "root seed"),
    ],
    "simulate": [
        ("ground_truth", str, REQUIRED, "ground-truth JSON"),
        ("out_dir", str, REQUIRED, "output directory"),
        ("students", int, 8, "episodes to roll"),
        ("horizon", int, 140, "episode length"),
        ("reward_mode", str, "threshold", "threshold | mean_prob"),
        ("seed", int, 0, "root seed"),
    ],
}


def build_parser():
    parser = argparse.ArgumentParser(prog="auxkt", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    handlers = {
        "gen-synthetic": cmd_gen_synthetic,
        "train": cmd_train,
        "extract-aux": cmd_extract_aux,
        "augment-train": cmd_augment_train,
        "eval": cmd_eval,
        "recommend": cmd_recommend,
        "simulate": cmd_simulate,
    }
    for name, options in OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        for dest, typ, default, help_text in options:
            flag = "--" + dest.replace("_", "-")
            p.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)
        p.set_defaults(func=handlers[name], _options=options)
    return parser


def resolve_options(args):
    """Defaults, then config file, then explicit flags; rejects unknown keys."""
    spec = {dest: (typ, default) for dest, typ, default, _ in args._options}
    merged = {dest: default for dest, (_, default) in spec.items()}
    if args.config:
        for key, raw in read_kv_file(args.config).items():
            if key not in spec:
                raise CliError(
                    f"unknown config key {key!r}; valid keys: {', '.join(sorted(spec))}"
                )
            typ = spec[key][0]
            merged[key] = typ(raw)
    for dest in spec:
        value = getattr(args, dest)
        if value is not None:
            merged[dest] = value
    missing = [k for k, v in merged.items() if v is REQUIRED]
    if missing:
        raise CliError(f"missing required options: {', '.join(sorted(missing))}")
    return merged


def write_metrics(path, rows):
    lines = [("metric", "value")] + [(k, format_float(v) if isinstance(v, float) else str(v))
                                     for k, v in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in lines:
            fh.write(f"{k}\t{v}\n")


def write_manifest(out_dir, subcommand, options, inputs, outputs):
    pairs = [("subcommand", subcommand)]
    pairs += [(k, "" if v is None else str(v)) for k, v in sorted(options.items())]
    pairs += [(f"input_sha256:{Path(p).name}", sha256_file(p)) for p in inputs if p]
    pairs += [(f"output_sha256:{Path(p).name}", sha256_file(p)) for p in outputs if p]
    write_kv_file(Path(out_dir) / f"manifest-{subcommand}.txt", pairs)


def _out_dir(options):
    out = Path(options["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synthetic(args):
    opt = resolve_options(args)
    out = _out_dir(opt)
    cfg = D.SyntheticConfig(
        inert_area_frac=opt["inert_area_frac"], student_jitter=opt["student_jitter"]
    )
    ds, gt = D.generate_synthetic(
        opt["students"], opt["exercises"], opt["visible_kcs"],
        opt["hidden_subskills"], opt["seq_len"], opt["seed"], cfg,
    )
    data_path = out / "data.csv"
    gt_path = out / "ground_truth.json"
    D.export_csv(ds, data_path)
    gt.save_json(gt_path)
    write_manifest(out, "gen-synthetic", opt, [], [data_path, gt_path])
    print(f"wrote {data_path} ({ds.n_interactions()} interactions) and {gt_path}")
    return 0


def _load_split(opt):
    ds = D.load_csv(opt["data"])
    if opt.get("aux"):
        aux = D.load_aux_csv(opt["aux"])
        n_aux = 1 + max((max(t) for t in aux.values() if t), default=-1)
        ds = D.augment_with_aux(ds, aux, n_aux=max(n_aux, 0))
    return ds, D.split_dataset(ds, seed=opt["seed"])


def _dkt_config(opt):
    base = K.DktConfig()
    return K.DktConfig(
        emb_dim=opt.get("emb_dim") or base.emb_dim,
        hidden_dim=opt.get("hidden_dim") or base.hidden_dim,
        lr=opt.get("lr") or base.lr,
        batch_size=opt.get("batch_size") or base.batch_size,
        max_epochs=opt.get("max_epochs") or base.max_epochs,
        patience=opt.get("patience") or base.patience,
    )


def _sparse_config(opt):
    base = S.SparseKtConfig()
    return S.SparseKtConfig(
        emb_dim=opt.get("emb_dim") or base.emb_dim,
        n_aux=opt.get("n_aux") or base.n_aux,
        c_max=opt.get("c_max") or base.c_max,
        hidden_dim=opt.get("hidden_dim") or base.hidden_dim,
        lr=opt.get("lr") or base.lr,
        batch_size=opt.get("batch_size") or base.batch_size,
        max_epochs=opt.get("max_epochs") or base.max_epochs,
        patience=opt.get("patience") or base.patience,
    )


def _bkt_config(opt):
    base = B.BktTrainConfig()
    return B.BktTrainConfig(
        lr=opt.get("lr") or base.lr,
        epochs=opt["epochs"] if opt.get("epochs") is not None else base.epochs,
        batch_size=opt.get("batch_size") or base.batch_size,
    )


def cmd_train(args):
    opt = resolve_options(args)
    out = _out_dir(opt)
    model_name = opt["model"]
    log = print if opt.get("verbose") else None
    if model_name not in ("bkt", "dkt", "sbrkt", "ppo"):
        raise CliError(f"unknown model {model_name!r}: expected bkt, dkt, sbrkt or ppo")
    inputs = [opt["data"], opt.get("aux")]

    if model_name == "ppo":
        if not opt.get("ground_truth"):
            raise CliError("train ppo needs --ground-truth")
        ds = D.load_csv(opt["data"])
        aux_qmatrix, n_aux = None, 0
        if opt.get("aux"):
            aux_qmatrix = D.load_aux_csv(opt["aux"])
            n_aux = 1 + max((max(t) for t in aux_qmatrix.values() if t), default=-1)
        obs_tags, n_obs = PL.policy_obs_tags(ds.qmatrix, ds.n_kcs, aux_qmatrix, n_aux)
        env = SimEnv(
            D.GroundTruth.load_json(opt["ground_truth"]),
            EnvConfig(horizon=opt["horizon"], reward_mode=opt["reward_mode"]),
        )
        base = PL.PpoConfig()
        cfg = PL.PpoConfig(
            lr=opt.get("lr") or base.lr,
            n_envs=opt["n_envs"], iterations=opt["iterations"], horizon=opt["horizon"],
            emb_dim=opt.get("emb_dim") or base.emb_dim,
            hidden_dim=opt.get("hidden_dim") or base.hidden_dim,
        )
        policy, history = PL.ppo_train(env, obs_tags, n_obs, cfg, seed=opt["seed"], log=log)
        ckpt = out / "policy.npz"
        policy.save(ckpt)
        _, summary = PL.ppo_evaluate(policy, env, n_students=min(8, opt["n_envs"]), seed=opt["seed"])
        metrics_path = out / "metrics-train-ppo.txt"
        write_metrics(metrics_path, [
            ("model", "ppo"), ("seed", opt["seed"]),
            ("iterations", len(history)),
            ("best_rollout_reward", max(r for _, r in history)),
            ("eval_mean_reward", summary.mean_reward),
            ("eval_gain", summary.gain),
        ])
        write_manifest(out, "train", opt, inputs + [opt["ground_truth"]], [ckpt, metrics_path])
        print(f"wrote {ckpt} and {metrics_path}")
        return 0

    ds, (train_ds, val_ds, test_ds) = _load_split(opt)
    if model_name == "bkt":
        model, history = B.train_bkt(train_ds, _bkt_config(opt), seed=opt["seed"])
        test_auc = B.evaluate_auc(model, test_ds)
        val_auc = B.evaluate_auc(model, val_ds)
        ckpt = out / "bkt_params.csv"
        model.export_text(ckpt)
        rows = [("model", "bkt"), ("seed", opt["seed"]), ("epochs", len(history)),
                ("val_auc", val_auc), ("test_auc", test_auc)]
    elif model_name == "dkt":
        model, history = K.train_dkt(train_ds, val_ds, _dkt_config(opt), seed=opt["seed"], log=log)
        ckpt = out / "dkt.npz"
        model.save(ckpt)
        rows = [("model", "dkt"), ("seed", opt["seed"]), ("epochs", len(history)),
                ("val_auc", max(h[2] for h in history)),
                ("test_auc", model.evaluate_auc(test_ds))]
    else:
        model, history = S.train_sparse(train_ds, val_ds, _sparse_config(opt), seed=opt["seed"], log=log)
        ckpt = out / "sbrkt.npz"
        model.save(ckpt)
        rows = [("model", "sbrkt"), ("seed", opt["seed"]), ("epochs", len(history)),
                ("val_auc", max(h[2] for h in history)),
                ("test_auc", model.evaluate_auc(test_ds))]
    metrics_path = out / f"metrics-train-{model_name}.txt"
    write_metrics(metrics_path, rows)
    write_manifest(out, "train", opt, inputs, [ckpt, metrics_path])
    print(f"wrote {ckpt} and {metrics_path}")
    return 0


def cmd_extract_aux(args):
    opt = resolve_options(args)
    model = S.SparseKT.load(opt["checkpoint"])
    out_path = Path(opt["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    aux = model.export_aux_csv(out_path)
    sizes = [len(v) for v in aux.values()]
    write_manifest(out_path.parent, "extract-aux", opt, [opt["checkpoint"]], [out_path])
    print(f"wrote {out_path}: {len(aux)} exercises, mean tags {np.mean(sizes):.2f}")
    return 0


def cmd_augment_train(args):
    opt = resolve_options(args)
    out = _out_dir(opt)
    if opt["model"] not in ("bkt", "dkt"):
        raise CliError(f"augment-train supports bkt or dkt, got {opt['model']!r}")
    plain = dict(opt)
    plain["aux"] = None
    _, (train_p, val_p, test_p) = _load_split(plain)
    _, (train_a, val_a, test_a) = _load_split(opt)
    if opt["model"] == "bkt":
        cfg = _bkt_config(opt)
        model_p, _ = B.train_bkt(train_p, cfg, seed=opt["seed"])
        model_a, _ = B.train_bkt(train_a, cfg, seed=opt["seed"])
        auc_p, auc_a = B.evaluate_auc(model_p, test_p), B.evaluate_auc(model_a, test_a)
        model_p.export_text(out / "bkt_params.csv")
        model_a.export_text(out / "bkt_aux_params.csv")
        ckpts = [out / "bkt_params.csv", out / "bkt_aux_params.csv"]
    else:
        cfg = _dkt_config(opt)
        model_p, _ = K.train_dkt(train_p, val_p, cfg, seed=opt["seed"])
        model_a, _ = K.train_dkt(train_a, val_a, cfg, seed=opt["seed"])
        auc_p, auc_a = model_p.evaluate_auc(test_p), model_a.evaluate_auc(test_a)
        model_p.save(out / "dkt.npz")
        model_a.save(out / "dkt_aux.npz")
        ckpts = [out / "dkt.npz", out / "dkt_aux.npz"]
    metrics_path = out / f"metrics-augment-{opt['model']}.txt"
    write_metrics(metrics_path, [
        ("model", opt["model"]), ("seed", opt["seed"]),
        ("plain_test_auc", auc_p), ("aux_test_auc", auc_a),
        ("aux_minus_plain", auc_a - auc_p),
    ])
    write_manifest(out, "augment-train", opt, [opt["data"], opt["aux"]],
                   ckpts + [metrics_path])
    print(f"wrote {metrics_path}: plain {auc_p:.4f} vs +aux {auc_a:.4f}")
    return 0


def _load_any_model(path):
    if str(path).endswith(".csv"):
        return "bkt", B.BktModel.import_text(path)
    from .tensor import load_checkpoint

    _, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "dkt":
        return "dkt", K.DktModel.load(path)
    if kind == "sparse_kt":
        return "sbrkt", S.SparseKT.load(path)
    if kind == "policy":
        return "ppo", PL.RecurrentPolicy.load(path)
    raise CliError(f"{path}: unrecognized checkpoint kind {kind!r}")


def cmd_eval(args):
    opt = resolve_options(args)
    out = _out_dir(opt)
    kind, model = _load_any_model(opt["checkpoint"])
    ds, splits = _load_split(opt)
    part = {"train": splits[0], "val": splits[1], "test": splits[2], "all": ds}.get(opt["split"])
    if part is None:
        raise CliError(f"unknown split {opt['split']!r}: expected train, val, test or all")
    if kind == "bkt":
        score = B.evaluate_auc(model, part)
    elif kind in ("dkt", "sbrkt"):
        score = model.evaluate_auc(part)
    else:
        raise CliError("eval expects a tracing model checkpoint, not a policy")
    metrics_path = out / f"metrics-eval-{kind}.txt"
    write_metrics(metrics_path, [
        ("model", kind), ("split", opt["split"]), ("seed", opt["seed"]), ("auc", score),
    ])
    write_manifest(out, "eval", opt, [opt["checkpoint"], opt["data"], opt.get("aux")],
                   [metrics_path])
    print(f"{kind} {opt['split']} auc {score:.4f}")
    return 0


def _write_report(path, rows, extra):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("student\ts_pre\ts_post\tgain\tmean_reward\n")
        for i, (s_pre, s_post, rewards) in enumerate(rows):
            gain = (s_post - s_pre) / (1.0 - s_pre) if s_pre < 1.0 else 0.0
            fh.write(
                f"{i}\t{format_float(s_pre)}\t{format_float(s_post)}\t"
                f"{format_float(gain)}\t{format_float(float(np.mean(rewards)))}\n"
            )
        for key, value in extra:
            fh.write(f"{key}\t{format_float(value) if isinstance(value, float) else value}\n")


def cmd_recommend(args):
    opt = resolve_options(args)
    out = _out_dir(opt)
    algorithm = opt["algorithm"]
    gt = D.GroundTruth.load_json(opt["ground_truth"])
    env = SimEnv(gt, EnvConfig(horizon=opt["horizon"], reward_mode=opt["reward_mode"]))
    seed = opt["seed"]
    episode_rng = rng_for(seed, "recommend-episodes")
    episode_seeds = [int(s) for s in episode_rng.integers(0, 2**31 - 1, size=opt["students"])]
    dual_stats = []

    if algorithm == "random":
        def make_agent(i):
            return P.RandomAgent(env.n_exercises, rng_for(seed, "recommend-agent", i))
    elif algorithm == "ppo":
        if not opt.get("checkpoint"):
            raise CliError("recommend ppo needs --checkpoint (policy.npz)")
        kind, policy = _load_any_model(opt["checkpoint"])
        if kind != "ppo":
            raise CliError(f"{opt['checkpoint']}: expected a policy checkpoint, got {kind}")

        def make_agent(i):
            return PL.PolicyAgent(policy)
    elif algorithm in ("expectimax", "expectimax-dual"):
        if not (opt.get("checkpoint") and opt.get("data")):
            raise CliError(f"recommend {algorithm} needs --checkpoint and --data")
        ds = D.load_csv(opt["data"])
        kind, model = _load_any_model(opt["checkpoint"])
        if kind == "sbrkt":
            human_view = P.SparsePlannerView(model, "human", ds.qmatrix)
            aux_view = P.SparsePlannerView(model, "aux", ds.qmatrix)
            aux_qmatrix = model.aux_sets()
            shared = True
        elif kind == "dkt":
            human_view = P.DktPlannerView(model, ds.qmatrix)
            aux_view = aux_qmatrix = None
            shared = False
            if algorithm == "expectimax-dual":
                if not (opt.get("aux_checkpoint") and opt.get("aux")):
                    raise CliError("expectimax-dual with a DKT model needs --aux-checkpoint and --aux")
                aux_kind, aux_model = _load_any_model(opt["aux_checkpoint"])
                if aux_kind != "dkt":
                    raise CliError("aux checkpoint must be a DKT model over auxiliary tags")
                aux_qmatrix = D.load_aux_csv(opt["aux"])
                aux_view = P.DktPlannerView(aux_model, aux_qmatrix)
        else:
            raise CliError(f"{opt['checkpoint']}: planners need a dkt or sbrkt checkpoint")

        if algorithm == "expectimax":
            def make_agent(i):
                return P.ExpectimaxAgent(human_view, ds.qmatrix, rng_for(seed, "recommend-agent", i))
        else:
            def make_agent(i):
                agent = P.DualExpectimaxAgent(
                    human_view, aux_view, ds.qmatrix, aux_qmatrix,
                    rng_for(seed, "recommend-agent", i), shared=shared,
                )
                dual_stats.append(agent.stats)
                return agent
    else:
        raise CliError(
            f"unknown algorithm {algorithm!r}: expected random, expectimax, expectimax-dual or ppo"
        )

    rows, summary, _ = P.run_episodes(env, make_agent, opt["students"], lambda i: episode_seeds[i])
    extra = [
        ("summary_gain", summary.gain),
        ("summary_mean_reward", summary.mean_reward),
        ("summary_reward_std", summary.reward_std),
    ]
    metrics_rows = [("algorithm", algorithm), ("students", summary.n_students),
                    ("seed", seed), ("gain", summary.gain),
                    ("mean_reward", summary.mean_reward), ("reward_std", summary.reward_std)]
    if dual_stats:
        steps = sum(s.steps for s in dual_stats)
        fallbacks = sum(s.fallbacks for s in dual_stats)
        rate = fallbacks / steps if steps else 0.0
        extra.append(("fallback_rate", rate))
        metrics_rows.append(("fallback_rate", rate))
    report_path = out / f"report-{algorithm}.tsv"
    metrics_path = out / f"metrics-recommend-{algorithm}.txt"
    _write_report(report_path, rows, extra)
    write_metrics(metrics_path, metrics_rows)
    write_manifest(out, "recommend", opt,
                   [opt["ground_truth"], opt.get("data"), opt.get("checkpoint"),
                    opt.get("aux_checkpoint"), opt.get("aux")],
                   [report_path, metrics_path])
    print(f"{algorithm}: gain {summary.gain:.4f}, mean reward {summary.mean_reward:.4f}"
          f" +- {summary.reward_std:.4f}")
    return 0


def cmd_simulate(args):
    opt = resolve_options(args)
    out = _out_dir(opt)
    gt = D.GroundTruth.load_json(opt["ground_truth"])
    env = SimEnv(gt, EnvConfig(horizon=opt["horizon"], reward_mode=opt["reward_mode"]))
    seed = opt["seed"]
    episode_rng = rng_for(seed, "simulate-episodes")
    episode_seeds = [int(s) for s in episode_rng.integers(0, 2**31 - 1, size=opt["students"])]
    rows, summary, _ = P.run_episodes(
        env,
        make_agent=lambda i: P.RandomAgent(env.n_exercises, rng_for(seed, "simulate-agent", i)),
        n_students=opt["students"],
        seed_stream=lambda i: episode_seeds[i],
    )
    report_path = out / "report-simulate.tsv"
    metrics_path = out / "metrics-simulate.txt"
    _write_report(report_path, rows, [
        ("summary_gain", summary.gain),
        ("summary_mean_reward", summary.mean_reward),
        ("summary_reward_std", summary.reward_std),
    ])
    write_metrics(metrics_path, [
        ("students", summary.n_students), ("seed", seed), ("gain", summary.gain),
        ("mean_reward", summary.mean_reward), ("reward_std", summary.reward_std),
    ])
    write_manifest(out, "simulate", opt, [opt["ground_truth"]], [report_path, metrics_path])
    print(f"simulate: gain {summary.gain:.4f}, mean reward {summary.mean_reward:.4f}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, D.DataError, B.BktError, K.DktError, S.SparseKtError,
            PL.PolicyError, P.PlannerError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
