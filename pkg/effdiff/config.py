#!/usr/bin/env python
"""
Experiment configuration: the ExperimentSettings model declaring every flat
key, a `key = value` file reader and the ExperimentConfig built from both.

Precedence is model defaults < presets < config file < command line. Keys may
be written with their section prefix (flow.theta) or bare (theta).
"""

import configparser
import enum
import logging
import math
import typing
from typing import Literal
from typing import Optional
from typing import Tuple

from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import ValidationError
from pydantic import field_validator
from pydantic_core import PydanticCustomError

from effdiff.ensemble import EnsembleConfig
from effdiff.flows import FlowFamily
from effdiff.flows import FlowSpec
from effdiff.noise import OUParams
from effdiff.sde_schemes import SchemeConfig
from effdiff.sde_schemes import SchemeKind


logger = logging.getLogger(__name__)


ROOT_SECTION = 'root'
DESK_FACTOR = 10

# Keys whose value may be left to the code ('auto' or 'none' in files)
OPTIONAL = ('sigma', 'alpha')
CHOICES = ('family', 'scheme', 'sample_spacing', 'scale')


class ConfigError(Exception):
    """Base class of configuration errors, `key` names the offending key"""

    def __init__(self, key, msg):
        super(ConfigError, self).__init__(msg)
        self.key = key


class UnknownKeyError(ConfigError):
    def __init__(self, key):
        super(UnknownKeyError, self).__init__(key, "Unknown configuration key '%s'" % key)


class TypeMismatchError(ConfigError):
    def __init__(self, key, value, expected):
        msg = "Key '%s' rejects %r: %s" % (key, value, expected)
        super(TypeMismatchError, self).__init__(key, msg)
        self.value = value
        self.expected = expected


class MissingRequiredError(ConfigError):
    def __init__(self, key):
        super(MissingRequiredError, self).__init__(key, "Key '%s' has no value" % key)


class UnknownValueError(ConfigError):
    def __init__(self, key, value, choices):
        msg = "Key '%s' does not accept %r, expected one of {%s}" % (
            key, value, ', '.join(choices))
        super(UnknownValueError, self).__init__(key, msg)
        self.value = value
        self.choices = choices


def _key(default, *sections, **kwargs):
    return Field(default, json_schema_extra={'sections': sections}, **kwargs)


class ExperimentSettings(BaseModel):
    """Every registered key with its type, bounds and default"""

    model_config = ConfigDict(extra='forbid', allow_inf_nan=False, use_enum_values=True,
                              validate_assignment=True)

    family: FlowFamily = _key(FlowFamily.CHAOTIC_CELLULAR.value, 'flow')
    k: float = _key(2.0 * math.pi, 'flow', gt=0, description='wavenumber')
    B: float = _key(0.0, 'flow', description='oscillation amplitude')
    omega: float = _key(math.pi, 'flow', gt=0, description='temporal frequency')
    theta: float = _key(0.1, 'flow', description='perturbation strength')
    sigma: Optional[float] = _key(None, 'flow', 'scheme', ge=0,
                                  description='noise amplitude, overrides d0')
    d0: float = _key(0.01, 'flow', gt=0, description='molecular diffusivity sigma^2 / 2')
    scheme: SchemeKind = _key(SchemeKind.LIE_TROTTER.value, 'scheme')
    dt: float = _key(0.05, 'scheme', gt=0, description='step size')
    alpha: Optional[float] = _key(None, 'scheme', ge=0, le=1)
    beta: float = _key(0.5, 'scheme', ge=0, le=1)
    implicit_iters: int = _key(SchemeConfig.default_implicit_max_iters, 'scheme', ge=1)
    implicit_tol: float = _key(SchemeConfig.default_implicit_tol, 'scheme', gt=0)
    seed: int = _key(EnsembleConfig.default_seed, 'noise')
    n_ou: int = _key(EnsembleConfig.default_n_ou, 'noise', ge=1)
    theta_ou: float = _key(OUParams.default_theta_ou, 'noise', gt=0)
    mu_ou: float = _key(OUParams.default_mu_ou, 'noise')
    sigma_ou: float = _key(OUParams.default_sigma_ou, 'noise', ge=0)
    n_particles: int = _key(EnsembleConfig.default_n_particles, 'ensemble', ge=2)
    x0: Tuple[float, float] = _key(EnsembleConfig.default_x0, 'ensemble')
    T: float = _key(EnsembleConfig.default_horizon, 'ensemble', gt=0, description='horizon')
    sample_spacing: Literal['geometric', 'linear'] = _key(EnsembleConfig.default_spacing,
                                                           'ensemble')
    samples_per_decade: int = _key(EnsembleConfig.default_per_decade, 'ensemble', ge=1)
    threads: int = _key(EnsembleConfig.default_threads, 'ensemble', ge=1)
    fine_factor: int = _key(25, 'bea', ge=10)
    modes: int = _key(64, 'cell', ge=4)
    cell_tol: float = _key(1e-10, 'cell', gt=0)
    out: str = _key('.', 'output')
    scale: Literal['paper', 'desk'] = _key('paper', 'output')

    @field_validator('*', mode='before')
    @classmethod
    def _normalise(cls, value, info):
        name = info.field_name
        if value is None:
            if name in OPTIONAL:
                return None
            raise PydanticCustomError('missing', 'no value')
        if not isinstance(value, str):
            return value
        value = value.strip()
        if value == '':
            raise PydanticCustomError('missing', 'no value')
        if name in OPTIONAL and value.lower() in ('none', 'auto'):
            return None
        if name in CHOICES:
            return value.lower()
        if name == 'x0':
            return tuple(part.strip() for part in value.split(','))
        return value

    @field_validator('modes')
    @classmethod
    def _power_of_two(cls, value):
        if value & (value - 1):
            raise ValueError("modes must be a power of two")
        return value


def choices_of(name):
    annotation = ExperimentSettings.model_fields[name].annotation
    if isinstance(annotation, type) and issubclass(annotation, enum.Enum):
        return tuple(member.value for member in annotation)
    return typing.get_args(annotation)


def _config_error(exc):
    """First error of a pydantic ValidationError as a ConfigError"""
    error = exc.errors()[0]
    name = str(error['loc'][0]) if error['loc'] else ''
    value = error.get('input')
    kind = error['type']
    if kind == 'extra_forbidden':
        return UnknownKeyError(name)
    if kind == 'missing':
        return MissingRequiredError(name)
    if kind in ('enum', 'literal_error'):
        return UnknownValueError(name, value, choices_of(name))
    return TypeMismatchError(name, value, error['msg'])


class ConfigKey(object):
    """One registered key, a view on its ExperimentSettings field"""

    def __init__(self, name, field):
        self.name = name
        self.field = field
        self.sections = tuple(field.json_schema_extra['sections'])

    @property
    def section(self):
        return self.sections[0]

    @property
    def default(self):
        return self.field.default

    @property
    def help(self):
        return self.field.description

    def convert(self, value):
        """Typed value of `value` (string or already typed)"""
        settings = ExperimentSettings()
        try:
            setattr(settings, self.name, value)
        except ValidationError as exc:
            raise _config_error(exc)
        return getattr(settings, self.name)

    def format(self, value):
        if value is None:
            return 'auto'
        if isinstance(value, tuple):
            return ','.join(repr(v) for v in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)


REGISTRY = [ConfigKey(name, field) for name, field in ExperimentSettings.model_fields.items()]

KEYS = dict((key.name, key) for key in REGISTRY)


def resolve_key(name):
    """Registered key for `name` or `section.name`"""
    name = name.strip()
    if name in KEYS:
        return KEYS[name]
    if '.' in name:
        section, _, bare = name.partition('.')
        key = KEYS.get(bare)
        if key is not None and section in key.sections:
            return key
    raise UnknownKeyError(name)


def read_config_file(path):
    """
    Raw key/value pairs of a flat config file
    :raise UnknownKeyError: a key is not registered
    """
    parser = configparser.ConfigParser(comment_prefixes=('#',),
                                       inline_comment_prefixes=('#',),
                                       interpolation=None)
    parser.optionxform = str
    with open(path) as handle:
        parser.read_string("[%s]\n" % ROOT_SECTION + handle.read(), source=path)
    raw = {}
    for section in parser.sections():
        for name, value in parser.items(section):
            if section != ROOT_SECTION:
                name = "%s.%s" % (section, name)
            raw[resolve_key(name).name] = value
    return raw


def _validated(raw):
    try:
        return ExperimentSettings(**raw)
    except ValidationError as exc:
        raise _config_error(exc)


class ExperimentConfig(object):
    """Validated effective configuration of one command"""

    default_experiment = 'run'

    def __init__(self, settings, experiment=None):
        self.settings = settings
        self.experiment = experiment or ExperimentConfig.default_experiment

    def __getitem__(self, name):
        return getattr(self.settings, name)

    def replace(self, **changes):
        values = self.settings.model_dump()
        values.update(changes)
        return ExperimentConfig(_validated(values), self.experiment)

    def scaled(self):
        """Desk scale divides T and n_particles by DESK_FACTOR"""
        if self['scale'] != 'desk':
            return self
        update = {'T': self['T'] / DESK_FACTOR,
                  'n_particles': max(2, self['n_particles'] // DESK_FACTOR)}
        return ExperimentConfig(self.settings.model_copy(update=update), self.experiment)

    @property
    def sigma(self):
        if self['sigma'] is not None:
            return self['sigma']
        return math.sqrt(2.0 * self['d0'])

    def flow(self):
        return FlowSpec.create(self['family'], k=self['k'], B=self['B'], omega=self['omega'],
                               theta=self['theta'])

    def scheme(self):
        return SchemeConfig(kind=self['scheme'], tau=self['dt'], alpha=self['alpha'],
                            beta=self['beta'], implicit_max_iters=self['implicit_iters'],
                            implicit_tol=self['implicit_tol'], sigma=self.sigma)

    def ou(self):
        return OUParams(theta_ou=self['theta_ou'], mu_ou=self['mu_ou'],
                        sigma_ou=self['sigma_ou'])

    def ensemble(self):
        return EnsembleConfig(flow=self.flow(), scheme=self.scheme(), ou=self.ou(),
                              n_particles=self['n_particles'], x0=self['x0'], horizon=self['T'],
                              spacing=self['sample_spacing'],
                              per_decade=self['samples_per_decade'], n_ou=self['n_ou'],
                              seed=self['seed'], threads=self['threads'])

    def header(self):
        """(key, text) pairs of the full effective configuration"""
        lines = [('experiment', self.experiment)]
        for key in REGISTRY:
            lines.append((key.name, key.format(self[key.name])))
        lines.append(('sigma_effective', repr(self.sigma)))
        return lines


def parse_config(path=None, overrides=None, experiment=None, presets=None):
    """
    :param path: flat config file, or None for defaults only
    :param overrides: mapping of key (bare or dotted) to value, applied last
    :param presets: mapping applied over the model defaults, below the file
    :return: ExperimentConfig with every registered key set and converted
    :raise ConfigError: unknown key, bad type or range, empty value or unknown choice
    """
    raw = {}
    for name, value in (presets or {}).items():
        raw[resolve_key(name).name] = value
    if path:
        raw.update(read_config_file(path))
    for name, value in (overrides or {}).items():
        raw[resolve_key(name).name] = value
    cfg = ExperimentConfig(_validated(raw), experiment)
    logger.debug("Effective configuration: %s", cfg.header())
    return cfg
