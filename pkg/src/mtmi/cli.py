"""Command-line front end: ``mtmi simulate | train | detect | eval | pipeline``.

Settings resolve in the order: built-in defaults, ``--preset``,
``--config`` file (``key=value`` lines), then explicit flags. Every
subcommand writes the fully resolved settings to ``<subcommand>_config.txt``
in its output directory; passing that file back with ``--config``
reproduces the run.

Exit codes: 0 success, 1 runtime failure, 2 bad arguments.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_bags, load_library, save_bags
from .detectors import DetectorKind, Fusion, detect_batch, load_scores, save_scores
from .errors import DimensionMismatchError, MTMIError, ValidationError
from .evaluation import (nauc, nauc_extrapolates, roc_curve, save_plot_data, save_roc,
                         save_summary)
from .learner import LearnerConfig, load_dictionary, save_dictionary, save_trace, train
from .simulator import NO_TARGET, SimConfig, generate, load_truth, save_truth, synthetic_rock_library
from .whitening import BackgroundSource, load_stats, save_stats

BUILTIN_LIBRARY = "builtin"


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _flag(v):
    if isinstance(v, bool):
        return v
    text = str(v).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _optional_int(v):
    if v is None or str(v).strip().lower() in ("", "auto", "none"):
        return None
    return int(v)


# key -> (parser, default, help). Keys double as flag names (underscores -> dashes).
SETTINGS = {
    # simulation
    "library": (str, None, "spectral library CSV, or 'builtin' for the bundled rock spectra"),
    "targets": (str, "basalt,verde_antique", "comma-separated target spectrum names"),
    "backgrounds": (str, "pyroxenite,phyllite,slate", "comma-separated background spectrum names"),
    "num_pos_bags": (_int, 10, "number of positive bags"),
    "num_neg_bags": (_int, 20, "number of negative bags"),
    "points_per_bag": (_int, 500, "instances per bag"),
    "targets_per_pos_bag": (_int, 250, "target instances per positive bag"),
    "mean_proportion": (_float, 0.3, "mean target abundance of a target instance"),
    "snr_db": (_float, 20.0, "signal-to-noise ratio in dB (amplitude, 20*log10); 'inf' for none"),
    "target_assignment": (str, "per_bag", "per_bag: one target type per positive bag; "
                                          "per_instance: drawn for every target instance"),
    # learner
    "k": (_int, 1, "initial number of target signatures"),
    "alpha": (_float, 0.0, "uniqueness weight"),
    "clusters": (_optional_int, None, "K-Means clusters for initialization (default 2*k)"),
    "kmeans_max_iter": (_int, 100, "K-Means iteration limit"),
    "max_iter": (_int, 1000, "optimization iteration limit"),
    "detector": (str, "ace", "detection statistic: ace or smf"),
    "background": (str, "neg", "background statistics source: neg (negative bags) or all"),
    "eigenvalue_floor": (_float, 1e-8, "eigenvalue floor relative to the largest eigenvalue"),
    "signature_tol": (_float, 1e-12, "max signature change accepted as converged"),
    "seed": (_int, 0, "random seed"),
    # detection / evaluation
    "fusion": (str, "max", "combine per-signature scores with max or mean"),
    "far": (_float, 1e-3, "false-positive-rate cutoff for NAUC"),
    "target": (str, None, "evaluate one target type only (others excluded)"),
    "per_target": (_flag, False, "also write one ROC and NAUC per target type"),
}

PRESETS = {
    "sim-a": {"targets": "basalt,verde_antique", "backgrounds": "pyroxenite,phyllite,slate",
              "num_pos_bags": 10, "num_neg_bags": 20, "points_per_bag": 500,
              "targets_per_pos_bag": 250, "mean_proportion": 0.3, "snr_db": 20.0,
              "k": 4, "alpha": 1.0, "far": 1e-3},
    "muufl": {"k": 2, "alpha": 0.1, "far": 1e-3},
    "aviris": {"k": 10, "alpha": 0.05, "background": "all", "far": 1e-2},
}

SIM_KEYS = ["library", "targets", "backgrounds", "num_pos_bags", "num_neg_bags", "points_per_bag",
            "targets_per_pos_bag", "mean_proportion", "snr_db", "target_assignment", "seed"]
LEARN_KEYS = ["k", "alpha", "clusters", "kmeans_max_iter", "max_iter", "detector", "background",
              "eigenvalue_floor", "signature_tol", "seed"]
DETECT_KEYS = ["detector", "fusion"]
EVAL_KEYS = ["far", "target", "per_target"]

COMMANDS = {
    "simulate": (SIM_KEYS, ["out"]),
    "train": (LEARN_KEYS, ["bags", "out"]),
    "detect": (DETECT_KEYS, ["bags", "dictionary", "stats", "out"]),
    "eval": (EVAL_KEYS, ["scores", "truth", "out"]),
    "pipeline": (list(dict.fromkeys(SIM_KEYS + LEARN_KEYS + DETECT_KEYS + EVAL_KEYS)), ["out"]),
}

PATH_HELP = {
    "out": "output directory",
    "bags": "Bag CSV file",
    "dictionary": "dictionary CSV written by 'train'",
    "stats": "background statistics CSV written by 'train'",
    "scores": "scores CSV written by 'detect'",
    "truth": "ground-truth CSV written by 'simulate'",
}


class UsageError(Exception):
    pass


def _flag_name(key):
    return "--" + key.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mtmi", description="Learn multi-target signatures from bag-labelled spectra "
                                 "and evaluate ACE/SMF detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    helps = {
        "simulate": "generate train/test bag datasets from a spectral library",
        "train": "learn a target dictionary from a Bag CSV",
        "detect": "score every instance of a Bag CSV with a learned dictionary",
        "eval": "ROC curve and NAUC from scores and ground truth",
        "pipeline": "simulate, train, detect and eval in one run",
    }
    for name, (keys, paths) in COMMANDS.items():
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--preset", choices=sorted(PRESETS), help="named parameter set")
        p.add_argument("--config", help="key=value settings file (e.g. a resolved config)")
        for path in paths:
            p.add_argument(_flag_name(path), dest=path, help=PATH_HELP[path])
        for key in keys:
            _, default, text = SETTINGS[key]
            if key == "per_target":
                p.add_argument(_flag_name(key), dest=key, action="store_const", const=True,
                               default=None, help=text)
            else:
                p.add_argument(_flag_name(key), dest=key, default=None,
                               help=f"{text} (default: {default})")
    return parser


def read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
    return values


def resolve(args, command):
    keys, paths = COMMANDS[command]
    raw = {k: SETTINGS[k][1] for k in keys}
    if args.preset:
        raw.update({k: v for k, v in PRESETS[args.preset].items() if k in raw})
    if args.config:
        try:
            from_file = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc.strerror}") from None
        for key, value in from_file.items():
            if key in raw or key in paths:
                raw[key] = value
            elif key not in SETTINGS and key != "preset":
                raise UsageError(f"--config: unknown setting {key!r}")
    for key in list(keys) + list(paths):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value

    settings = {}
    for key in keys:
        value = raw[key]
        if value is None or (isinstance(value, str) and value == "" and SETTINGS[key][1] is None):
            settings[key] = None
            continue
        try:
            settings[key] = SETTINGS[key][0](value)
        except (TypeError, ValueError):
            raise UsageError(f"{_flag_name(key)}: invalid value {value!r}") from None
    for path in paths:
        settings[path] = raw.get(path)
        if settings[path] in ("", None):
            raise UsageError(f"{_flag_name(path)} is required")
    return settings


def write_resolved(settings, command, out_dir):
    keys, paths = COMMANDS[command]
    lines = [f"# resolved settings for 'mtmi {command}'"]
    for key in [p for p in paths if p != "out"] + list(keys):
        value = settings.get(key)
        if value is None:
            value = ""
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    Path(out_dir, f"{command}_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sim_config(s, seed):
    try:
        return SimConfig(targets=s["targets"], backgrounds=s["backgrounds"],
                         num_pos_bags=s["num_pos_bags"], num_neg_bags=s["num_neg_bags"],
                         points_per_bag=s["points_per_bag"],
                         targets_per_pos_bag=s["targets_per_pos_bag"],
                         mean_target_proportion=s["mean_proportion"], snr_db=s["snr_db"],
                         seed=seed, target_assignment=s["target_assignment"])
    except ValidationError as exc:
        raise UsageError(str(exc)) from None


def _learner_config(s):
    try:
        return LearnerConfig(initial_targets=s["k"], uniqueness_weight=s["alpha"],
                             kmeans_clusters=s["clusters"], kmeans_max_iter=s["kmeans_max_iter"],
                             max_iter=s["max_iter"], detector=s["detector"], seed=s["seed"],
                             background_source=s["background"],
                             eigenvalue_floor=s["eigenvalue_floor"],
                             signature_tol=s["signature_tol"])
    except (ValidationError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _check_choices(s):
    try:
        if "detector" in s:
            DetectorKind.parse(s["detector"])
        if "fusion" in s:
            Fusion.parse(s["fusion"])
        if "background" in s:
            BackgroundSource.parse(s["background"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if "far" in s and not (0 < s["far"] <= 1):
        raise UsageError("--far must lie in (0, 1]")


def _load_library(s):
    lib = s.get("library")
    if not lib:
        raise UsageError("--library is required (a library CSV path or 'builtin')")
    if lib == BUILTIN_LIBRARY:
        return synthetic_rock_library()
    if not Path(lib).is_file():
        raise UsageError(f"--library: file not found: {lib}")
    return load_library(lib)


def dataset_seeds(seed):
    """Independent (train, test) simulation seeds derived from one run seed."""
    children = np.random.SeedSequence(seed).spawn(2)
    return tuple(int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_simulate(s, out):
    library = _load_library(s)
    train_seed, test_seed = dataset_seeds(s["seed"])
    configs = {"train": _sim_config(s, train_seed), "test": _sim_config(s, test_seed)}
    written = {}
    for split, cfg in configs.items():
        bags, truth = generate(library, cfg)
        save_bags(bags, out / f"{split}_bags.csv")
        save_truth(truth, out / f"{split}_truth.csv")
        written[split] = (out / f"{split}_bags.csv", out / f"{split}_truth.csv")
    return written


def run_train(s, bags_path, out):
    config = _learner_config(s)
    bags = load_bags(bags_path)
    dictionary, trace = train(bags, config)
    save_dictionary(dictionary, out / "dictionary.csv", out / "dictionary_whitened.csv")
    save_stats(dictionary.stats, out / "stats.csv")
    save_trace(trace, out / "trace.csv")
    return dictionary, trace


def run_detect(s, bags_path, dictionary_path, stats_path, out):
    bags = load_bags(bags_path)
    signatures = load_dictionary(dictionary_path)
    stats = load_stats(stats_path)
    if not (bags.dim == signatures.shape[1] == stats.dim):
        raise DimensionMismatchError(
            f"dimensionality differs: {bags_path} has D={bags.dim}, {dictionary_path} has "
            f"D={signatures.shape[1]}, {stats_path} has D={stats.dim}")
    scores = detect_batch(bags, signatures, stats, s["detector"], s["fusion"])
    save_scores(scores, out / "scores.csv")
    return scores


def _labels(scores, truth, target=None):
    by_key = {(r.bag_id, r.instance_index): r for r in truth}
    values, labels = [], []
    for bag_id, idx, score in scores:
        rec = by_key.get((bag_id, idx))
        if rec is None:
            raise MTMIError(f"no ground truth for bag {bag_id}, instance {idx}")
        present = rec.target_name != NO_TARGET and rec.proportion > 0
        if target is not None and present and rec.target_name != target:
            continue
        values.append(score)
        labels.append(present)
    return np.array(values), np.array(labels, dtype=bool)


def run_eval(s, scores_path, truth_path, out):
    scores = load_scores(scores_path)
    truth = load_truth(truth_path)
    far = s["far"]
    values, labels = _labels(scores, truth, s["target"])
    curve = roc_curve(values, labels)
    area = nauc(curve, far)
    save_roc(curve, out / "roc.csv")
    save_plot_data(curve, out / "plot.csv", far)
    metrics = [("nauc", area), ("far_cutoff", far), ("n_target", int(labels.sum())),
               ("n_background", int((~labels).sum())),
               ("extrapolated", int(nauc_extrapolates(curve, far)))]
    if s["per_target"]:
        names = sorted({r.target_name for r in truth if r.target_name != NO_TARGET})
        for name in names:
            v, y = _labels(scores, truth, name)
            c = roc_curve(v, y)
            save_roc(c, out / f"roc_{name}.csv")
            save_plot_data(c, out / f"plot_{name}.csv", far)
            metrics.append((f"nauc_{name}", nauc(c, far)))
    save_summary(metrics, out / "summary.csv")
    return dict(metrics)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        s = resolve(args, command)
        _check_choices(s)
        if command in ("simulate", "pipeline"):
            _sim_config(s, 0)
            _load_library(s)
        if command in ("train", "pipeline"):
            _learner_config(s)
    except UsageError as exc:
        parser.error(str(exc))

    try:
        out = _out_dir(s["out"])
        write_resolved(s, command, out)
        if command == "simulate":
            run_simulate(s, out)
        elif command == "train":
            run_train(s, s["bags"], out)
        elif command == "detect":
            run_detect(s, s["bags"], s["dictionary"], s["stats"], out)
        elif command == "eval":
            run_eval(s, s["scores"], s["truth"], out)
        else:
            written = run_simulate(s, out)
            run_train(s, written["train"][0], out)
            run_detect(s, written["test"][0], out / "dictionary.csv", out / "stats.csv", out)
            metrics = run_eval(s, out / "scores.csv", written["test"][1], out)
            print(f"nauc={metrics['nauc']:.6f}")
    except UsageError as exc:
        parser.error(str(exc))
    except (MTMIError, OSError) as exc:
        print(f"mtmi {command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
