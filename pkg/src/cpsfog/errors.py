"""Exception hierarchy shared by all simulator modules."""


class SimError(Exception):
    """Base class for every error raised by the simulator."""


class ScheduleError(SimError):
    """An event was scheduled before the current clock."""


# network model
class UnknownCell(SimError):
    pass


class UnknownScope(SimError):
    pass


class UnknownDevice(SimError):
    pass


class CapacityExceeded(SimError):
    pass


class NotAttached(SimError):
    pass


class AlreadyAttached(SimError):
    pass


class SameCell(SimError):
    pass


class Jammed(SimError):
    pass


# security contexts
class AuthFailure(SimError):
    pass


class ContextExpired(SimError):
    pass


class NoStoredContext(SimError):
    pass


class NoNasContext(SimError):
    pass


class NoContext(SimError):
    pass


class PacketTooLarge(SimError):
    pass


class CounterReplay(SimError):
    pass


class NotAuthenticated(SimError):
    pass


# attacks
class TargetNotCompromised(SimError):
    pass


class NoCompromisedServer(SimError):
    pass


# fog defense
class DeviceUnreachable(SimError):
    pass


class ModelNotBootstrapped(SimError):
    pass


class RegistryDesync(SimError):
    """Registry and live security contexts disagree; always a simulator bug."""


class NoPeerGroup(SimError):
    pass


# scenario io
class ParseError(SimError):
    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field

    def __str__(self):
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field:
            where.append(f"field {self.field}")
        prefix = f"[{', '.join(where)}] " if where else ""
        return prefix + self.args[0]


class ValidationError(SimError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class RunIdMismatch(SimError):
    pass
