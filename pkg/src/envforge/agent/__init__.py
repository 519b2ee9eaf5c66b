from .actions import Action, parse_llm_response
from .expertise import ExpertiseRecord, ExpertiseStore, accumulate_expertise, merge_records, normalize_error
from .plan import PHASES, AutomatedState, PlanError, PlanState, parse_plan, run_automated_mode_step
from .prompts import PLAN_TEMPLATE, build_automated_prompt, build_standard_prompt
from .session import SessionResult, SessionTrace, TraceStep, run_session
