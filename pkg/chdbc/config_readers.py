"""
Run and sweep configuration files.

Configs are flat text files with one `key = value` pair per line (`key: value`
is accepted too). Everything after a `#` is a comment.
"""

import re

import numpy as np

from chdbc.model import ModelParams
from chdbc.stepper import NewtonConfig


class ConfigError(Exception):
    """
    Custom chdbc Exception.
    """
    pass


INITIAL_DATA = {"step_x": 0, "sine_product": 0, "uniform_random": 3, "constant": 1}

# key: (type, default). A default of ... marks a required key. Only keys with
# a None default may be set to none.
RUN_KEYS = {
    "model": (str, ...),
    "n_cells": (int, ...),
    "tau": (float, ...),
    "n_steps": (int, ...),
    "eps": (float, ...),
    "delta": (float, ...),
    "kappa": (float, 1.0),
    "alpha": (float, 1.0),
    "beta": (float, 0.0),
    "K": (float, None),
    "potential_F": (str, "double_well"),
    "potential_G": (str, "double_well"),
    "transmission": (str, "affine"),
    "initial_data": (str, ...),
    "output_dir": (str, None),
    "snapshot_every": (int, 0),
    "vtk": (bool, False),
    "profile_y": (float, None),
    "newton_abs_tol": (float, NewtonConfig.abs_tol),
    "newton_rel_tol": (float, NewtonConfig.rel_tol),
    "newton_step_tol": (float, NewtonConfig.step_tol),
    "newton_stall_tol": (float, NewtonConfig.stall_tol),
    "newton_max_iters": (int, NewtonConfig.max_iters),
    "newton_max_halvings": (int, NewtonConfig.max_halvings),
    "newton_continuation_start": (float, NewtonConfig.continuation_start),
    "newton_continuation_factor": (float, NewtonConfig.continuation_factor),
    "newton_max_splits": (int, NewtonConfig.max_splits),
}


def read_config_file(config_file):
    """
    Read a config file into a dictionary of strings.

    Args:
        config_file (str): path to the config file

    Returns:
        dictionary read from the config file
    """
    with open(config_file) as f:
        return read_config_text(f.read())


def read_config_text(content):
    """
    Parse the content of a config file.

    Args:
        content (str): content of the config file read as a string

    Returns:
        dictionary mapping keys to raw string values

    Raises:
        ConfigError: on lines that are not key/value pairs and on repeated keys
    """
    d = {}
    for n, line in enumerate(content.split('\n'), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*[=:]\s*(.*)$", line)
        if m is None:
            raise ConfigError("line {}: expected 'key = value', got '{}'".format(n, line))
        k, v = m.groups()
        if k in d:
            raise ConfigError("line {}: key '{}' is repeated".format(n, k))
        d[k] = v.strip()
    return d


def apply_overrides(d, overrides):
    """
    Patch a raw config dictionary with `key=value` strings.
    """
    d = dict(d)
    for o in overrides or []:
        k, sep, v = o.partition('=')
        if not sep or not k.strip():
            raise ConfigError("override '{}' is not of the form key=value".format(o))
        d[k.strip()] = v.strip()
    return d


def parse_initial_data(value):
    """
    Split an initial datum like `uniform_random(-0.1, 0.1, 42)` into its name
    and arguments.

    Returns:
        name (str), args (tuple)
    """
    m = re.match(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$", value)
    if m is None or m.group(1) not in INITIAL_DATA:
        raise ConfigError("unknown initial data '{}'. Should be one of {}".format(
            value, sorted(INITIAL_DATA)))
    name, payload = m.groups()
    args = [a.strip() for a in payload.split(',')] if payload and payload.strip() else []
    if len(args) != INITIAL_DATA[name]:
        raise ConfigError("initial data '{}' takes {} arguments, got {}".format(
            name, INITIAL_DATA[name], len(args)))
    try:
        if name == "uniform_random":
            lo, hi, seed = float(args[0]), float(args[1]), int(args[2])
            if lo > hi:
                raise ConfigError("uniform_random needs lo <= hi")
            if seed < 0:
                raise ConfigError("uniform_random needs a nonnegative seed")
            return name, (lo, hi, seed)
        return name, tuple(float(a) for a in args)
    except ValueError as e:
        raise ConfigError("bad arguments in initial data '{}': {}".format(value, e)) from e


def format_initial_data(name, args):
    if name == "uniform_random":
        return "uniform_random({!r}, {!r}, {:d})".format(*args)
    if args:
        return "{}({})".format(name, ", ".join(repr(a) for a in args))
    return name


def _parse_value(key, typ, raw):
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError("{}: expected a boolean, got '{}'".format(key, raw))
    if raw.lower() in ("none", ""):
        return None
    try:
        return typ(raw) if typ is not int else int(raw, 0)
    except ValueError as e:
        raise ConfigError("{}: cannot parse '{}' as {}".format(key, raw, typ.__name__)) from e


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunConfig:
    def __init__(self, d, dict_format="file"):
        """
        Args:
            d (dict): dictionary of raw strings read from a config file with
                read_config_file, or the .__dict__ of a RunConfig object.
            dict_format (str): format of the dictionary passed in `d`.
                Either "file" if read from a config file, or "chdbc" if read
                from the .__dict__ of a RunConfig object.

        Raises:
            ConfigError: on missing, unknown or invalid keys
        """
        if dict_format == "file":
            unknown = sorted(set(d) - set(RUN_KEYS))
            if unknown:
                raise ConfigError("unknown keys: {}".format(", ".join(unknown)))
            for key, (typ, default) in RUN_KEYS.items():
                if key in d:
                    value = _parse_value(key, typ, d[key])
                elif default is ...:
                    raise ConfigError("missing required key '{}'".format(key))
                else:
                    value = default
                setattr(self, key, value)

        elif dict_format == "chdbc":
            self.__dict__ = dict(d)

        else:
            raise ValueError(
                "dict_format '{}' not supported. "
                "Should be {{'file','chdbc'}}".format(dict_format)
            )

        self.validate()

    def validate(self):
        """
        Check the numeric constraints of the run.
        """
        for key, (typ, default) in RUN_KEYS.items():
            if default is not None and getattr(self, key) is None:
                raise ConfigError("key '{}' cannot be none".format(key))
        self.initial_data = format_initial_data(*parse_initial_data(self.initial_data))
        if self.n_cells < 1:
            raise ConfigError("n_cells must be at least 1")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be nonnegative")
        if self.profile_y is not None:
            j = self.profile_y * self.n_cells
            if not 0 <= self.profile_y <= 1 or abs(j - round(j)) > 1e-9:
                raise ConfigError("profile_y = {} is not a mesh row for n_cells = {}".format(
                    self.profile_y, self.n_cells))
        try:
            self.model_params()
            self.newton_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def model_params(self):
        """
        Returns:
            instance of the model.ModelParams class
        """
        return ModelParams(model=self.model, eps=self.eps, delta=self.delta,
                           kappa=self.kappa, tau=self.tau,
                           K=self.K if self.model == "robin" else None,
                           alpha=self.alpha, beta=self.beta,
                           potential_F=self.potential_F,
                           potential_G=self.potential_G,
                           transmission=self.transmission)

    def newton_config(self):
        return NewtonConfig(abs_tol=self.newton_abs_tol,
                            rel_tol=self.newton_rel_tol,
                            step_tol=self.newton_step_tol,
                            stall_tol=self.newton_stall_tol,
                            max_iters=self.newton_max_iters,
                            max_halvings=self.newton_max_halvings,
                            continuation_start=self.newton_continuation_start,
                            continuation_factor=self.newton_continuation_factor,
                            max_splits=self.newton_max_splits)

    @property
    def initial_data_spec(self):
        return parse_initial_data(self.initial_data)

    def replace(self, **kwargs):
        """
        Copy of this config with some fields changed.
        """
        d = dict(self.__dict__)
        d.update(kwargs)
        return RunConfig(d, dict_format="chdbc")

    def to_text(self):
        """
        Serialise the config in the key = value file format.
        """
        lines = []
        for key in RUN_KEYS:
            v = getattr(self, key)
            if v is not None:
                lines.append("{} = {}".format(key, _format_value(v)))
        return "\n".join(lines) + "\n"

    def write_to_file(self, path):
        with open(path, 'w') as f:
            f.write(self.to_text())

    def __eq__(self, other):
        """
        Compare the fields of two RunConfig instances, floats up to
        numpy.allclose.
        """
        if not isinstance(other, RunConfig):
            return NotImplemented
        for key, (typ, default) in RUN_KEYS.items():
            a, b = getattr(self, key), getattr(other, key)
            if typ is float and a is not None and b is not None:
                if not np.allclose(a, b):
                    return False
            elif a != b:
                return False
        return True

    def __repr__(self):
        return "RunConfig(\n  " + self.to_text().strip().replace("\n", "\n  ") + "\n)"


class SweepConfig:
    def __init__(self, d):
        """
        Args:
            d (dict): dictionary of raw strings read from a sweep config file.
                It holds the keys of the Robin base run plus K_list,
                reference ("limit" or "robin") and K_reference.

        Raises:
            ConfigError: on invalid keys or inconsistent runs
        """
        d = dict(d)
        if "K_list" not in d:
            raise ConfigError("missing required key 'K_list'")
        try:
            self.K_list = [float(k) for k in d.pop("K_list").split(',') if k.strip()]
        except ValueError as e:
            raise ConfigError("K_list: {}".format(e)) from e
        self.reference = d.pop("reference", "limit").strip()
        K_reference = d.pop("K_reference", None)

        if not self.K_list:
            raise ConfigError("K_list is empty")
        if any(not k > 0 for k in self.K_list):
            raise ConfigError("K values must be positive")
        if any(not a > b for a, b in zip(self.K_list[:-1], self.K_list[1:])):
            raise ConfigError("K_list must be strictly decreasing")

        d.setdefault("K", repr(self.K_list[0]))
        self.base = RunConfig(d)
        if self.base.model != "robin":
            raise ConfigError("the base run of a sweep must use model = robin")

        if self.reference == "limit":
            if self.base.transmission != "affine":
                raise ConfigError("a limit reference needs the affine transmission")
            self.K_reference = None
        elif self.reference == "robin":
            try:
                self.K_reference = float(K_reference) if K_reference else 1e-5
            except ValueError as e:
                raise ConfigError("K_reference: {}".format(e)) from e
            if not 0 < self.K_reference < self.K_list[-1]:
                raise ConfigError("K_reference must be positive and below every K")
        else:
            raise ConfigError("reference '{}' not supported. "
                              "Should be {{'limit','robin'}}".format(self.reference))

    def robin_config(self, K):
        return self.base.replace(K=K)

    @property
    def reference_config(self):
        """
        Run config of the reference solution, on the grid of the base run.
        """
        if self.reference == "limit":
            return self.base.replace(model="limit", K=None)
        return self.base.replace(K=self.K_reference)

    def to_text(self):
        lines = [self.base.to_text().rstrip("\n")]
        lines.append("K_list = " + ", ".join(repr(k) for k in self.K_list))
        lines.append("reference = " + self.reference)
        if self.K_reference is not None:
            lines.append("K_reference = " + repr(self.K_reference))
        return "\n".join(lines) + "\n"
