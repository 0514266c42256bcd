from .util import register_commands
