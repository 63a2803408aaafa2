"""Experiment configuration: parsing, validation, defaults and presets.

A config is a YAML or JSON mapping with the top-level keys ``model``,
``method``, ``seed``, ``batch_count``, ``output`` and ``estimators``. The
``method`` block holds exactly one of ``smc`` or ``direct``. Unknown keys
are errors, and every problem found is reported at once.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigurationError
from .kernels import KINDS, KernelConfig
from .model import (
    APPENDIX_C_Y_OBS,
    AppendixCModel,
    ExternalProcessModel,
    GaussianConjugateModel,
    NormalCut,
    PointMassCut,
    UniformCut,
)
from .sequencing import DistanceMetric
from .smc import SmcConfig

__all__ = ["ExperimentConfig", "parse_config", "load_config", "build_model", "build_estimators",
           "PRESETS", "preset"]

MODEL_NAMES = ("gaussian-conjugate", "appendix-c", "external")

_TOP_KEYS = {"model", "method", "seed", "batch_count", "output", "estimators"}
_MODEL_KEYS = {
    "gaussian-conjugate": {"name", "y", "sigma", "sigma_p", "f", "cut", "lipschitz_delta"},
    "appendix-c": {"name", "y_obs", "cut"},
    "external": {"name", "command", "d", "d_nu", "cut", "support_box", "start", "cwd"},
}
_KERNEL_KEYS = {"kind", "step_size", "slice_width", "slice_max_doublings", "t"}
_SMC_KEYS = {"N", "S", "P", "permute", "resampling", "metric", "metric_scale", "bottleneck",
             "particle_threads", "kernel"}
_DIRECT_KEYS = {"S", "L", "burn_in", "thin", "kernel"}
_CUT_KEYS = {"normal": {"kind", "mean", "scale", "cov"}, "uniform": {"kind", "low", "high"},
             "point": {"kind", "value"}}


@dataclass
class ExperimentConfig:
    model: dict
    method_kind: str
    method: dict
    seed: int
    batch_count: int
    output: str
    estimators: list
    base_dir: str = field(default=".", compare=False)

    def as_dict(self) -> dict:
        return {
            "model": copy.deepcopy(self.model),
            "method": {self.method_kind: copy.deepcopy(self.method)},
            "seed": self.seed,
            "batch_count": self.batch_count,
            "output": self.output,
            "estimators": copy.deepcopy(self.estimators),
        }

    def canonical(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))

    def kernel_config(self) -> KernelConfig:
        k = self.method["kernel"]
        return KernelConfig(k["kind"], k.get("step_size"), k.get("slice_width"),
                            k["slice_max_doublings"])

    def smc_config(self) -> SmcConfig:
        m = self.method
        if m["metric"] == "scaled-euclidean":
            metric = DistanceMetric("scaled-euclidean", tuple(m["metric_scale"]))
        else:
            metric = DistanceMetric()
        return SmcConfig(N=m["N"], t=m["kernel"]["t"], P=m["P"], permute=m["permute"],
                         kernel=self.kernel_config(), seed=self.seed,
                         batch_count=self.batch_count, resampling=m["resampling"],
                         metric=metric, bottleneck=m["bottleneck"],
                         particle_threads=m["particle_threads"])


class _Errors(list):
    def need(self, cond, msg):
        if not cond:
            self.append(msg)
        return cond


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) \
        and math.isfinite(float(v))


def _is_vec(v, n=None):
    ok = isinstance(v, (list, tuple)) and len(v) > 0 and all(_is_num(x) for x in v)
    return ok and (n is None or len(v) == n)


def _unknown(errors, block, allowed, where):
    for k in block:
        if k not in allowed:
            errors.append(f"{where}.{k}: unknown key")


def _check_cut(errors, cut, where, dim=None):
    if not errors.need(isinstance(cut, dict), f"{where}: must be a mapping"):
        return
    kind = cut.get("kind")
    if not errors.need(kind in _CUT_KEYS, f"{where}.kind: must be one of {sorted(_CUT_KEYS)}"):
        return
    _unknown(errors, cut, _CUT_KEYS[kind], where)
    if kind == "normal":
        if errors.need(_is_vec(cut.get("mean"), dim), f"{where}.mean: numeric vector required"
                       + (f" of length {dim}" if dim else "")):
            n = len(cut["mean"])
            if "cov" in cut:
                cov = cut["cov"]
                errors.need(isinstance(cov, list) and len(cov) == n
                            and all(_is_vec(r, n) for r in cov),
                            f"{where}.cov: {n}x{n} numeric matrix required")
            if "scale" in cut:
                errors.need(_is_num(cut["scale"]) and cut["scale"] >= 0,
                            f"{where}.scale: nonnegative number required")
            errors.need(not ("cov" in cut and "scale" in cut),
                        f"{where}: give either scale or cov, not both")
    elif kind == "uniform":
        ok = errors.need(_is_vec(cut.get("low"), dim), f"{where}.low: numeric vector required")
        ok &= errors.need(_is_vec(cut.get("high"), dim), f"{where}.high: numeric vector required")
        if ok:
            errors.need(len(cut["low"]) == len(cut["high"])
                        and all(a < b for a, b in zip(cut["low"], cut["high"])),
                        f"{where}: need low < high componentwise")
    else:
        errors.need(_is_vec(cut.get("value"), dim), f"{where}.value: numeric vector required")


def _cut_dim(cut):
    if not isinstance(cut, dict):
        return None
    for key in ("mean", "low", "value"):
        if isinstance(cut.get(key), (list, tuple)):
            return len(cut[key])
    return None


def _check_model(errors, model):
    if not errors.need(isinstance(model, dict), "model: mapping required"):
        return None
    name = model.get("name")
    if not errors.need(name in MODEL_NAMES, f"model.name: must be one of {list(MODEL_NAMES)}"):
        return None
    model = copy.deepcopy(model)
    _unknown(errors, model, _MODEL_KEYS[name], "model")
    if name == "gaussian-conjugate":
        if errors.need(_is_vec(model.get("y")), "model.y: numeric vector required"):
            d = len(model["y"])
        else:
            d = None
        for key in ("sigma", "sigma_p"):
            errors.need(_is_num(model.get(key)) and model[key] > 0,
                        f"model.{key}: positive number required")
        f = model.setdefault("f", "identity")
        if isinstance(f, str):
            f = model["f"] = {"kind": f}
        if errors.need(isinstance(f, dict) and f.get("kind") in ("identity", "linear", "sin"),
                       "model.f.kind: must be identity, linear or sin"):
            if f["kind"] == "linear":
                _unknown(errors, f, {"kind", "matrix", "offset"}, "model.f")
                mat = f.get("matrix")
                errors.need(isinstance(mat, list) and d is not None and len(mat) == d
                            and all(_is_vec(r) for r in mat)
                            and len({len(r) for r in mat}) == 1,
                            "model.f.matrix: d x d_nu numeric matrix required")
                if "offset" in f:
                    errors.need(_is_vec(f["offset"], d), "model.f.offset: length-d vector required")
            else:
                _unknown(errors, f, {"kind"}, "model.f")
        if "lipschitz_delta" in model:
            errors.need(_is_num(model["lipschitz_delta"]) and model["lipschitz_delta"] > 0,
                        "model.lipschitz_delta: positive number required")
        if errors.need("cut" in model, "model.cut: required for gaussian-conjugate"):
            _check_cut(errors, model["cut"], "model.cut")
            dn = _cut_dim(model["cut"])
            if d is not None and dn is not None and f.get("kind") in ("identity", "sin"):
                errors.need(dn == d, f"model.cut: identity/sin f needs d_nu == d ({d}), got {dn}")
            if f.get("kind") == "linear" and dn is not None and isinstance(f.get("matrix"), list) \
                    and f["matrix"] and isinstance(f["matrix"][0], list):
                errors.need(len(f["matrix"][0]) == dn, "model.f.matrix: columns must equal d_nu")
    elif name == "appendix-c":
        model.setdefault("y_obs", list(APPENDIX_C_Y_OBS))
        errors.need(_is_vec(model["y_obs"], 2), "model.y_obs: numeric 2-vector required")
        model.setdefault("cut", {"kind": "uniform", "low": [0.3], "high": [1.0]})
        _check_cut(errors, model["cut"], "model.cut", dim=1)
    else:
        cmd = model.get("command")
        errors.need(isinstance(cmd, str) and cmd.strip() or
                    (isinstance(cmd, list) and cmd and all(isinstance(c, str) for c in cmd)),
                    "model.command: command string or list required")
        ok = errors.need(_is_int(model.get("d")) and model["d"] >= 1, "model.d: integer >= 1 required")
        ok &= errors.need(_is_int(model.get("d_nu")) and model["d_nu"] >= 1,
                          "model.d_nu: integer >= 1 required")
        if errors.need("cut" in model, "model.cut: required for external"):
            _check_cut(errors, model["cut"], "model.cut", dim=model["d_nu"] if ok else None)
        if "support_box" in model:
            box = model["support_box"]
            good = isinstance(box, dict) and set(box) == {"low", "high"} and ok \
                and _is_vec(box["low"], model["d"]) and _is_vec(box["high"], model["d"])
            errors.need(good, "model.support_box: mapping with length-d low and high required")
        if "start" in model:
            errors.need(ok and _is_vec(model["start"], model["d"]),
                        "model.start: length-d vector required")
        errors.need("support_box" in model or "start" in model,
                    "model: external models need support_box or start for chain starts")
    return model


def _check_kernel(errors, kernel, where, default_t):
    kernel = copy.deepcopy(kernel) if kernel is not None else {}
    if not errors.need(isinstance(kernel, dict), f"{where}: mapping required"):
        return {}
    _unknown(errors, kernel, _KERNEL_KEYS, where)
    kernel.setdefault("kind", "slice")
    errors.need(kernel["kind"] in KINDS, f"{where}.kind: must be one of {list(KINDS)}")
    for key in ("step_size", "slice_width"):
        if key in kernel and kernel[key] is not None:
            errors.need(_is_num(kernel[key]) and kernel[key] > 0,
                        f"{where}.{key}: positive number required")
    kernel.setdefault("slice_max_doublings", 16)
    errors.need(_is_int(kernel["slice_max_doublings"]) and kernel["slice_max_doublings"] >= 0,
                f"{where}.slice_max_doublings: integer >= 0 required")
    kernel.setdefault("t", default_t)
    errors.need(_is_int(kernel["t"]) and kernel["t"] >= 0, f"{where}.t: integer >= 0 required")
    return kernel


def _check_smc(errors, block):
    block = copy.deepcopy(block)
    _unknown(errors, block, _SMC_KEYS, "method.smc")
    block.setdefault("N", 25)
    block.setdefault("S", 9)
    block.setdefault("P", 0)
    block.setdefault("permute", False)
    block.setdefault("resampling", "multinomial")
    block.setdefault("metric", "euclidean")
    block.setdefault("bottleneck", False)
    block.setdefault("particle_threads", 1)
    errors.need(_is_int(block["N"]) and block["N"] >= 2, "method.smc.N: integer >= 2 required")
    errors.need(_is_int(block["S"]) and block["S"] >= 0, "method.smc.S: integer >= 0 required")
    errors.need(_is_int(block["P"]) and block["P"] >= 0, "method.smc.P: integer >= 0 required")
    errors.need(isinstance(block["permute"], bool), "method.smc.permute: boolean required")
    errors.need(isinstance(block["bottleneck"], bool), "method.smc.bottleneck: boolean required")
    errors.need(block["resampling"] in ("multinomial", "systematic"),
                "method.smc.resampling: multinomial or systematic")
    errors.need(block["metric"] in ("euclidean", "scaled-euclidean"),
                "method.smc.metric: euclidean or scaled-euclidean")
    errors.need(_is_int(block["particle_threads"]) and block["particle_threads"] >= 1,
                "method.smc.particle_threads: integer >= 1 required")
    if "metric_scale" in block:
        errors.need(_is_vec(block["metric_scale"]) and all(v > 0 for v in block["metric_scale"]),
                    "method.smc.metric_scale: positive vector required")
    variant = (isinstance(block["P"], int) and block["P"] > 0) or block["permute"] is True
    block["kernel"] = _check_kernel(errors, block.get("kernel"), "method.smc.kernel",
                                    4 if variant else 5)
    return block


def _check_direct(errors, block):
    block = copy.deepcopy(block)
    _unknown(errors, block, _DIRECT_KEYS, "method.direct")
    block.setdefault("S", 9)
    block.setdefault("L", 1000)
    block.setdefault("thin", 1)
    errors.need(_is_int(block["S"]) and block["S"] >= 0, "method.direct.S: integer >= 0 required")
    if errors.need(_is_int(block["L"]) and block["L"] >= 1, "method.direct.L: integer >= 1 required"):
        block.setdefault("burn_in", block["L"] // 10)
    errors.need(_is_int(block.get("burn_in")) and 0 <= block["burn_in"] < block.get("L", 0),
                "method.direct.burn_in: integer with 0 <= burn_in < L required")
    errors.need(_is_int(block["thin"]) and block["thin"] >= 1,
                "method.direct.thin: integer >= 1 required")
    block["kernel"] = _check_kernel(errors, block.get("kernel"), "method.direct.kernel", 1)
    return block


def _check_estimators(errors, ests, d, d_nu=None):
    if ests is None:
        return [{"name": f"theta_{j + 1}", "kind": "coordinate", "of": "theta", "index": j + 1}
                for j in range(d or 0)]
    if not errors.need(isinstance(ests, list), "estimators: list required"):
        return []
    out, names = [], set()
    for i, e in enumerate(ests):
        where = f"estimators[{i}]"
        if not errors.need(isinstance(e, dict), f"{where}: mapping required"):
            continue
        e = copy.deepcopy(e)
        errors.need(isinstance(e.get("name"), str) and e["name"] not in names,
                    f"{where}.name: unique string required")
        names.add(e.get("name"))
        kind = e.get("kind")
        if kind == "coordinate":
            _unknown(errors, e, {"name", "kind", "of", "index"}, where)
            e.setdefault("of", "theta")
            errors.need(e["of"] in ("theta", "nu"), f"{where}.of: theta or nu")
            if errors.need(_is_int(e.get("index")) and e["index"] >= 1,
                           f"{where}.index: 1-based integer required"):
                dim = d if e["of"] == "theta" else d_nu
                errors.need(dim is None or e["index"] <= dim,
                            f"{where}.index: {e['index']} exceeds the {e['of']} dimension {dim}")
        elif kind == "indicator":
            _unknown(errors, e, {"name", "kind", "of", "low", "high"}, where)
            e.setdefault("of", "theta")
            errors.need(e["of"] in ("theta", "nu"), f"{where}.of: theta or nu")
            if errors.need(_is_vec(e.get("low")) and _is_vec(e.get("high"))
                           and len(e["low"]) == len(e["high"]), f"{where}: low/high vectors required"):
                dim = d if e["of"] == "theta" else d_nu
                errors.need(dim is None or len(e["low"]) == dim,
                            f"{where}: low/high must have length {dim}")
        else:
            errors.append(f"{where}.kind: coordinate or indicator")
        out.append(e)
    return out


def parse_config(source, *, base_dir=None) -> ExperimentConfig:
    """Validate a config mapping (or a path to YAML/JSON) and fill defaults."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        data = load_config(path)
        base_dir = base_dir or str(path.parent)
    else:
        data = source
    errors = _Errors()
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping", ["config must be a mapping"])
    _unknown(errors, data, _TOP_KEYS, "config")
    model = _check_model(errors, data.get("model"))
    method = data.get("method")
    kind, block = None, None
    if errors.need(isinstance(method, dict), "method: mapping required"):
        present = [k for k in ("smc", "direct") if k in method]
        _unknown(errors, method, {"smc", "direct"}, "method")
        errors.need(len(present) == 1, "method: exactly one of smc or direct is required"
                    + (f" (found {present})" if present else ""))
        for name in present:
            raw = method[name] if method[name] is not None else {}
            if errors.need(isinstance(raw, dict), f"method.{name}: mapping required"):
                checked = _check_smc(errors, raw) if name == "smc" else _check_direct(errors, raw)
                if len(present) == 1:
                    kind, block = name, checked
    seed = data.get("seed", 0)
    errors.need(_is_int(seed) and 0 <= seed < 2 ** 64, "seed: 64-bit nonnegative integer required")
    batch_count = data.get("batch_count", 1)
    errors.need(_is_int(batch_count) and batch_count >= 1, "batch_count: integer >= 1 required")
    output = data.get("output", "cutsmc-out")
    errors.need(isinstance(output, str) and output, "output: directory path string required")
    d = None
    if model is not None:
        if model["name"] == "gaussian-conjugate" and _is_vec(model.get("y")):
            d = len(model["y"])
        elif model["name"] == "appendix-c":
            d = 2
        elif _is_int(model.get("d")):
            d = model["d"]
    d_nu = None
    if model is not None and isinstance(model.get("cut"), dict):
        try:
            d_nu = _cut_dim(model["cut"])
        except (TypeError, ValueError, KeyError):
            d_nu = None
    estimators = _check_estimators(errors, data.get("estimators"), d, d_nu)
    if kind == "smc" and block is not None and block.get("metric") == "scaled-euclidean" \
            and "metric_scale" not in block and model is not None:
        cut = model.get("cut", {})
        if isinstance(cut, dict) and cut.get("kind") == "uniform":
            block["metric_scale"] = [float(h) - float(l) for l, h in zip(cut["low"], cut["high"])]
        else:
            errors.append("method.smc.metric_scale: required unless the cut distribution is uniform")
    if model is not None and model.get("name") == "external" and isinstance(model.get("command"), str) \
            and base_dir is not None:
        model.setdefault("cwd", str(base_dir))
    if errors:
        raise ConfigurationError(f"{len(errors)} configuration error(s): " + "; ".join(errors), errors)
    return ExperimentConfig(model, kind, block, int(seed), int(batch_count), output, estimators,
                            base_dir or ".")


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}")


# --------------------------------------------------------------------------
# builders


def _build_cut(cut):
    kind = cut["kind"]
    if kind == "normal":
        return NormalCut(cut["mean"], cov=cut.get("cov"), scale=cut.get("scale"))
    if kind == "uniform":
        return UniformCut(cut["low"], cut["high"])
    return PointMassCut(cut["value"])


def _linear_map(matrix, offset):
    A = np.asarray(matrix, dtype=float)
    b = np.zeros(A.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    return _Linear(A, b)


class _Linear:
    def __init__(self, A, b):
        self.A, self.b = A, b

    def __call__(self, nu):
        return self.A @ nu + self.b


def _identity(nu):
    return np.asarray(nu, dtype=float)


def _sin(nu):
    return np.sin(np.asarray(nu, dtype=float))


def build_model(model: dict):
    name = model["name"]
    cut = _build_cut(model["cut"])
    if name == "gaussian-conjugate":
        f = model.get("f", {"kind": "identity"})
        delta = model.get("lipschitz_delta")
        if f["kind"] == "linear":
            fn = _linear_map(f["matrix"], f.get("offset"))
            if delta is None:
                delta = float(np.linalg.norm(fn.A, 2))
        elif f["kind"] == "sin":
            fn, delta = _sin, delta if delta is not None else 1.0
        else:
            fn, delta = _identity, delta if delta is not None else 1.0
        return GaussianConjugateModel(model["y"], model["sigma"], model["sigma_p"], fn, cut,
                                      lipschitz_delta=delta, d_nu=cut.dim)
    if name == "appendix-c":
        return AppendixCModel(model["y_obs"], cut)
    box = model.get("support_box")
    return ExternalProcessModel(model["command"], model["d"], model["d_nu"], cut,
                                support_box=None if box is None else (box["low"], box["high"]),
                                start=model.get("start"), cwd=model.get("cwd"))


class _Coordinate:
    def __init__(self, of, index):
        self.of, self.index = of, index - 1

    def __call__(self, nu, theta):
        return float((theta if self.of == "theta" else nu)[self.index])


class _Indicator:
    def __init__(self, of, low, high):
        self.of = of
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)

    def __call__(self, nu, theta):
        x = theta if self.of == "theta" else nu
        return float(np.all((x >= self.low) & (x <= self.high)))


def build_estimators(estimators) -> dict:
    out = {}
    for e in estimators:
        if e["kind"] == "coordinate":
            out[e["name"]] = _Coordinate(e["of"], e["index"])
        else:
            out[e["name"]] = _Indicator(e["of"], e["low"], e["high"])
    return out


# --------------------------------------------------------------------------
# presets mirroring the batch settings of the reactor study, applied to the
# built-in models

GAUSSIAN_TESTBED = {
    "name": "gaussian-conjugate", "y": [2.0, 0.0], "sigma": 1.0, "sigma_p": 1.0,
    "f": "identity", "cut": {"kind": "normal", "mean": [0.0, 0.0], "scale": 0.5},
}
APPENDIX_C = {"name": "appendix-c"}

_METHODS = {
    "smc": {"smc": {"N": 25, "S": 9, "kernel": {"kind": "slice", "t": 5}}},
    "tempered": {"smc": {"N": 10, "S": 9, "P": 1, "kernel": {"kind": "slice", "t": 4}}},
    "permuted": {"smc": {"N": 10, "S": 9, "permute": True, "kernel": {"kind": "slice", "t": 4}}},
    "direct": {"direct": {"S": 9, "L": 1000, "kernel": {"kind": "slice"}}},
}

PRESETS = {
    f"{mname}-{meth}": {"model": model, "method": method, "seed": 0, "batch_count": 8,
                        "output": f"cutsmc-out/{mname}-{meth}"}
    for mname, model in (("gaussian", GAUSSIAN_TESTBED), ("appendix-c", APPENDIX_C))
    for meth, method in _METHODS.items()
}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
