import builtins
import logging
import numbers
import typing as ty

from immutabledict import immutabledict

import qstab

export, __all__ = qstab.exporter()

# Placeholder value for omitted values.
# Use instead of None since None might be a proper value/default
OMITTED = "<OMITTED>"
__all__.extend("OMITTED InvalidConfiguration".split())


class InvalidConfiguration(Exception):
    pass


@export
class Option:
    """Configuration option taken by a ConfigSection."""

    taken_by: str = "<unbound>"

    def __init__(
        self,
        name: str,
        type: ty.Union[str, type, tuple, list] = OMITTED,
        default: ty.Any = OMITTED,
        default_factory: ty.Union[str, ty.Callable] = OMITTED,
        choices: ty.Optional[ty.Sequence] = None,
        help: str = "",
    ):
        """
        :param name: Option identifier
        :param type: Excepted type of the option's value.
        :param default: Default value the option takes.
        :param default_factory: Function that produces a default value.
        :param choices: If given, the value must be one of these.
        :param help: Human-readable description of the option.
        """
        self.name = name
        self.type = type
        self.default = default
        self.default_factory = default_factory
        self.choices = tuple(choices) if choices is not None else None
        self.help = help

        if self.default is not OMITTED and self.default_factory is not OMITTED:
            raise RuntimeError(f"Tried to specify more than one default for option {self.name}.")

    def get_default(self):
        """Return default value for the option."""
        if self.default is not OMITTED:
            return self.default
        if self.default_factory is not OMITTED:
            return self.default_factory()  # type: ignore
        raise InvalidConfiguration(f"Missing option {self.name} required by {self.taken_by}")

    def check_value(self, value):
        """Return value, coerced to the option type where that is lossless.

        Raises InvalidConfiguration otherwise.

        """
        expected = self.type
        if expected is not OMITTED and value is not None:
            if expected is float:
                if isinstance(value, numbers.Real) and not isinstance(value, bool):
                    value = float(value)
                else:
                    raise InvalidConfiguration(
                        f"Invalid type for option {self.name} of {self.taken_by}. "
                        f"Expected a number, got {value!r}"
                    )
            elif expected is int:
                if not isinstance(value, numbers.Integral) or isinstance(value, bool):
                    raise InvalidConfiguration(
                        f"Invalid type for option {self.name} of {self.taken_by}. "
                        f"Expected an integer, got {value!r}"
                    )
                value = int(value)
            elif expected is tuple and isinstance(value, list):
                value = tuple(value)
            elif not isinstance(value, expected):
                raise InvalidConfiguration(
                    f"Invalid type for option {self.name} of {self.taken_by}. "
                    f"Expected a {expected}, got a {builtins.type(value)}"
                )
        if self.choices is not None and value not in self.choices:
            raise InvalidConfiguration(
                f"Option {self.name} of {self.taken_by} must be one of {self.choices}, "
                f"got {value!r}"
            )
        return value

    def validate(self, config, set_defaults=True):
        """Checks if the option is in config and sets defaults if needed."""
        if self.name in config:
            config[self.name] = self.check_value(config[self.name])
        elif set_defaults:
            config[self.name] = self.get_default()


@export
class Config(Option):
    """An alternative to the `takes_config` class decorator which uses the descriptor protocol to
    return the config value when the attribute is accessed from within a ConfigSection."""

    def __init__(self, **kwargs):
        # for now set the name to empty string
        # will be replaced by the actual name
        # after __set_name__ is called on class
        # instantiation
        if "name" not in kwargs:
            kwargs["name"] = ""
        super().__init__(**kwargs)

    def __set_name__(self, owner, name):
        """Section class has been created, we can now set the option name and add it to the
        section's takes_config dictionary."""
        self.name = name
        self.taken_by = owner.__name__
        new_takes_config = {name: self}
        if hasattr(owner, "takes_config") and len(owner.takes_config):
            if name in owner.takes_config and owner.takes_config[name].taken_by == owner.__name__:
                raise RuntimeError(f"Attempt to specify option {name} twice")
            owner.takes_config = immutabledict({**owner.takes_config, **new_takes_config})
        else:
            owner.takes_config = immutabledict(new_takes_config)

    def __get__(self, obj, objtype=None):
        if obj is None:
            return self
        return self.fetch(obj)

    def __set__(self, obj, value):
        raise AttributeError(f"{self.name} is a configuration option and cannot be set directly.")

    def fetch(self, section):
        """This function is called when the attribute is being accessed.

        Should be overridden by subclasses to customize behavior.

        """
        if not hasattr(section, "config"):
            raise AttributeError("Section has not been configured.")
        if self.name in section.config:
            return section.config[self.name]
        return self.get_default()


@export
def combine_configs(old_config, new_config=None, mode="update"):
    if new_config is None:
        new_config = dict()

    if mode == "update":
        c = dict(old_config).copy()
        c.update(new_config)
        return c
    if mode == "setdefault":
        return combine_configs(new_config, old_config, mode="update")
    if mode == "replace":
        return new_config

    raise RuntimeError("Expected update, setdefault or replace as config setting mode")


@export
class ConfigSection:
    """A group of options with every default materialized on construction.

    Subclasses declare options as Config class attributes and may override check() for
    constraints spanning several options.

    """

    takes_config: ty.Mapping[str, Option] = immutabledict()
    config: immutabledict

    def __init__(self, config: ty.Optional[ty.Mapping] = None, **kwargs):
        config = combine_configs(config or {}, kwargs)
        unknown = sorted(set(config) - set(self.takes_config))
        if unknown:
            raise InvalidConfiguration(
                f"Unknown option(s) {', '.join(unknown)} for {self.__class__.__name__}. "
                f"Known options are: {', '.join(sorted(self.takes_config))}"
            )
        for option in self.takes_config.values():
            option.validate(config)
        self.config = immutabledict(config)
        self.log = logging.getLogger(self.__class__.__name__)
        self.check()

    def check(self):
        """Raise InvalidConfiguration if options are inconsistent."""
        pass

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.config.items()}

    def replace(self, **changes):
        return self.__class__(combine_configs(self.config, changes))

    @classmethod
    def describe(cls) -> ty.Dict[str, str]:
        """Return {option name: help string}."""
        return {name: opt.help for name, opt in cls.takes_config.items()}

    def __eq__(self, other):
        return type(self) is type(other) and self.config == other.config

    def __hash__(self):
        return hash((self.__class__.__name__, qstab.hashablize(self.config)))

    def __repr__(self):
        options = ", ".join(f"{k}={v!r}" for k, v in self.config.items())
        return f"{self.__class__.__name__}({options})"
