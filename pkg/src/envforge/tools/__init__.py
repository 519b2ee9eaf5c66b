from .base import Param, ToolContext, ToolDescriptor, ToolRegistry, ToolResult, parse_arguments, validate
from .inventory import TOOLS, default_toolset
