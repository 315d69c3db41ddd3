"""Plain-text configuration files for networks and experiments.

The grammar is line-based: `[section]` headers followed by `key = value`
pairs, `#` comments, values tokenized on whitespace with `;` separating
matrix rows.  Network files use [prior], [network], and repeated [sensor]
sections; experiment files use a single [experiment] section.  Parsing
errors carry line numbers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import (Coherent, GaussianPrior, NetworkModel, NoncoherentEnvelope,
                    NoncoherentStats, SensorSpec, sigma_h_equivalent)
from .powalloc import SolverOptions

__all__ = [
    "parse_network",
    "serialize_network",
    "load_network",
    "ExperimentConfig",
    "load_experiment",
    "apply_receiver_override",
]


def _tokenize(text):
    """Yield (line_number, section, key, value) records."""
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if not section:
                raise ConfigError("empty section name", line=ln)
            yield ln, section, None, None
            continue
        if section is None:
            raise ConfigError("key outside any [section]", line=ln)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=ln)
        key, value = line.split("=", 1)
        yield ln, section, key.strip().lower(), value.strip()


def _floats(value, ln):
    try:
        return [float(tok) for tok in value.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {value!r}", line=ln) from exc


def _float(value, ln):
    vals = _floats(value, ln)
    if len(vals) != 1:
        raise ConfigError(f"expected a single number, got {value!r}", line=ln)
    return vals[0]


def _int(value, ln):
    f = _float(value, ln)
    if f != int(f):
        raise ConfigError(f"expected an integer, got {value!r}", line=ln)
    return int(f)


def _bool(value, ln):
    v = value.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}", line=ln)


def _matrix(value, ln):
    rows = [r for r in value.split(";") if r.strip()]
    data = [_floats(r, ln) for r in rows]
    width = {len(r) for r in data}
    if len(width) != 1:
        raise ConfigError("matrix rows have unequal lengths", line=ln)
    return np.array(data)


def parse_network(text):
    """Build a NetworkModel from network-config text."""
    prior_kv = {}
    network_kv = {}
    sensors_kv = []
    current = None
    for ln, section, key, value in _tokenize(text):
        if key is None:
            if section == "prior":
                current = prior_kv
            elif section == "network":
                current = network_kv
            elif section == "sensor":
                sensors_kv.append({})
                current = sensors_kv[-1]
            else:
                raise ConfigError(f"unknown section [{section}]", line=ln)
            continue
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", line=ln)
        current[key] = (value, ln)

    if "cov" not in prior_kv:
        raise ConfigError("missing [prior] cov")
    cov = _matrix(*prior_kv["cov"])
    mean = None
    if "mean" in prior_kv:
        mean = np.array(_floats(*prior_kv["mean"]))
    try:
        prior = GaussianPrior(cov=cov, mean=mean)
    except Exception as exc:
        raise ConfigError(f"invalid prior: {exc}", line=prior_kv["cov"][1]) from exc

    if "p_tot" not in network_kv:
        raise ConfigError("missing [network] p_tot")
    p_tot = _float(*network_kv["p_tot"])

    if not sensors_kv:
        raise ConfigError("at least one [sensor] section is required")
    sensors = []
    for kv in sensors_kv:
        for req in ("a", "sigma_n", "bits", "channel", "sigma_w"):
            if req not in kv:
                raise ConfigError(f"sensor is missing {req!r}")
        kind_value, kind_ln = kv["channel"]
        kind = kind_value.strip().lower()
        if kind == "coherent" or kind == "envelope":
            if "h" not in kv:
                raise ConfigError(f"{kind} channel needs h", line=kind_ln)
            mag = _float(*kv["h"])
            channel = Coherent(mag) if kind == "coherent" else NoncoherentEnvelope(mag)
        elif kind == "stats":
            if "sigma_h" not in kv:
                raise ConfigError("stats channel needs sigma_h", line=kind_ln)
            channel = NoncoherentStats(_float(*kv["sigma_h"]))
        else:
            raise ConfigError(f"unknown channel kind {kind_value!r}", line=kind_ln)
        try:
            sensors.append(SensorSpec(
                gain=np.array(_floats(*kv["a"])),
                sigma_n=_float(*kv["sigma_n"]),
                bits=_int(*kv["bits"]),
                channel=channel,
                sigma_w=_float(*kv["sigma_w"]),
            ))
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"invalid sensor: {exc}", line=kv["a"][1]) from exc
    try:
        return NetworkModel(prior=prior, sensors=tuple(sensors), p_tot=p_tot)
    except Exception as exc:
        raise ConfigError(f"invalid network: {exc}") from exc


def serialize_network(net):
    """Round-trip-exact text form of a network (floats via repr)."""
    lines = ["[prior]"]
    if np.any(net.prior.mean):
        lines.append("mean = " + " ".join(repr(v) for v in net.prior.mean))
    lines.append("cov = " + " ; ".join(
        " ".join(repr(v) for v in row) for row in net.prior.cov))
    lines += ["", "[network]", f"p_tot = {net.p_tot!r}"]
    for s in net.sensors:
        lines += ["", "[sensor]"]
        lines.append("a = " + " ".join(repr(v) for v in s.gain))
        lines.append(f"sigma_n = {s.sigma_n!r}")
        lines.append(f"bits = {s.bits}")
        if isinstance(s.channel, Coherent):
            lines.append("channel = coherent")
            lines.append(f"h = {s.channel.h_mag!r}")
        elif isinstance(s.channel, NoncoherentEnvelope):
            lines.append("channel = envelope")
            lines.append(f"h = {s.channel.h_mag!r}")
        else:
            lines.append("channel = stats")
            lines.append(f"sigma_h = {s.channel.sigma_h!r}")
        lines.append(f"sigma_w = {s.sigma_w!r}")
    return "\n".join(lines) + "\n"


def load_network(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read network file {path}: {exc}") from exc
    return parse_network(text)


def apply_receiver_override(net, kind):
    """Swap every sensor's channel for the requested receiver kind while
    preserving the mean channel power."""
    kind = kind.strip().lower()
    channels = []
    for s in net.sensors:
        sigh = sigma_h_equivalent(s.channel)
        if kind == "coherent":
            channels.append(Coherent(np.sqrt(2.0) * sigh))
        elif kind == "envelope":
            channels.append(NoncoherentEnvelope(np.sqrt(2.0) * sigh))
        elif kind == "stats":
            channels.append(NoncoherentStats(sigh))
        else:
            raise ConfigError(f"unknown receiver kind {kind!r}")
    return net.with_channels(channels)


_SCHEMES = ("tr_fim", "logdet_fim", "mse_min", "qblue_min", "uniform")


@dataclass
class ExperimentConfig:
    network_path: str
    network: NetworkModel
    p_tot_db: np.ndarray
    quantizers: tuple
    receiver: str | None
    seed: int
    trials: int
    schemes: tuple
    fading_average: bool
    fidelity: str
    wwb_scales: tuple | None
    out: str | None
    options: SolverOptions
    config_hash: str


def load_experiment(path, overrides=None):
    """Parse an experiment file; `overrides` may replace seed/out."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    kv = {}
    for ln, section, key, value in _tokenize(text):
        if key is None:
            if section != "experiment":
                raise ConfigError(f"unknown section [{section}]", line=ln)
            continue
        if key in kv:
            raise ConfigError(f"duplicate key {key!r}", line=ln)
        kv[key] = (value, ln)

    if "network" not in kv:
        raise ConfigError("missing network path")
    net_path = (path.parent / kv["network"][0]).resolve()
    network = load_network(net_path)

    receiver = kv["receiver"][0].strip().lower() if "receiver" in kv else None
    if receiver is not None:
        network = apply_receiver_override(network, receiver)

    if "p_tot_db" in kv:
        grid = np.array(_floats(*kv["p_tot_db"]))
        if grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise ConfigError("p_tot_db must be a nonempty strictly increasing grid",
                              line=kv["p_tot_db"][1])
    else:
        grid = np.array([10.0 * np.log10(network.p_tot)])

    quantizers = tuple(kv["quantizer"][0].split()) if "quantizer" in kv else ("uniform",)
    for qk in quantizers:
        if qk not in ("uniform", "lloyd-max"):
            raise ConfigError(f"unknown quantizer {qk!r}", line=kv["quantizer"][1])

    schemes = tuple(kv["schemes"][0].split()) if "schemes" in kv else \
        ("tr_fim", "logdet_fim", "mse_min", "uniform")
    for s in schemes:
        if s not in _SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}", line=kv["schemes"][1])

    seed = _int(*kv["seed"]) if "seed" in kv else 0
    trials = _int(*kv["trials"]) if "trials" in kv else 100_000
    fading = _bool(*kv["fading_average"]) if "fading_average" in kv else False
    fidelity = kv["fidelity"][0].strip() if "fidelity" in kv else "physical-layer"
    if fidelity not in ("physical-layer", "flip-level"):
        raise ConfigError(f"unknown fidelity {fidelity!r}", line=kv["fidelity"][1])
    wwb_scales = tuple(_floats(*kv["wwb_scales"])) if "wwb_scales" in kv else None
    out = kv["out"][0] if "out" in kv else None

    options = SolverOptions(
        tol=_float(*kv["newton_tol"]) if "newton_tol" in kv else 1e-8,
        max_iter=_int(*kv["newton_max_iter"]) if "newton_max_iter" in kv else 100,
        n_starts=_int(*kv["starts"]) if "starts" in kv else 10,
        seed=seed,
        envelope_averaged=fading,
    )

    if overrides:
        if overrides.get("seed") is not None:
            seed = int(overrides["seed"])
            options = SolverOptions(**{**options.__dict__, "seed": seed})
        if overrides.get("out") is not None:
            out = overrides["out"]

    resolved = "\n".join([
        text,
        "--resolved-network--",
        serialize_network(network),
        f"seed={seed}",
        f"schemes={','.join(schemes)}",
        f"quantizers={','.join(quantizers)}",
    ])
    digest = hashlib.sha256(resolved.encode()).hexdigest()[:16]

    return ExperimentConfig(
        network_path=str(net_path),
        network=network,
        p_tot_db=grid,
        quantizers=quantizers,
        receiver=receiver,
        seed=seed,
        trials=trials,
        schemes=schemes,
        fading_average=fading,
        fidelity=fidelity,
        wwb_scales=wwb_scales,
        out=out,
        options=options,
        config_hash=digest,
    )
