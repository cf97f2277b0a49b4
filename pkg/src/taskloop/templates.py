"""Prompt rendering and structured response parsing.

The generator prompt asks for a Python snippet plus one input, a self review,
and a difficulty prediction on a 0..8 scale. Responses come back as tagged
blocks (<think>, <answer>, <review>, <difficulty_prediction>) with fenced code
inside the answer region. Parsing is strict: tag presence and order are
enforced, and any violation produces a typed failure that maps to format
reward 0.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

logger = logging.getLogger(__name__)

TAG_SEQUENCE = ("think", "answer", "review", "difficulty_prediction")

DIFFICULTY_MIN = 0
DIFFICULTY_MAX = 8

BANNED_KEYWORDS = ("raise",)

_CODE_FENCE_RE = re.compile(r"```python\s*\n(.*?)```", re.DOTALL)
_INPUT_FENCE_RE = re.compile(r"```input\s*\n(.*?)```", re.DOTALL)
_ENTRY_FUNCTION_RE = re.compile(r"^[ \t]*def\s+f\s*\(", re.MULTILINE)
_INTEGER_RE = re.compile(r"^-?\d+$")


@dataclass(frozen=True)
class FormatVerdict:
    ok: bool
    reason: Optional[str] = None  # missing_tag | tag_order | bad_difficulty |
    #                               no_entry_function | banned_keyword |
    #                               multiple_inputs | empty_block

    def __post_init__(self):
        if self.ok and self.reason is not None:
            raise ValueError("a passing verdict carries no reason")
        if not self.ok and self.reason is None:
            raise ValueError("a failing verdict needs a reason")


PASS = FormatVerdict(ok=True)


@dataclass(frozen=True)
class GeneratorParse:
    think: str
    answer_code: str
    answer_input: str
    review: str
    difficulty_k: int

    @property
    def predicted_mu(self) -> float:
        return self.difficulty_k / DIFFICULTY_MAX


@dataclass(frozen=True)
class SolverParse:
    think: str
    answer: str


ParseResult = Union[GeneratorParse, SolverParse, FormatVerdict]


def as_verdict(result: ParseResult) -> FormatVerdict:
    """Collapse a parse result to its format verdict."""
    if isinstance(result, FormatVerdict):
        return result
    return PASS


def format_reward(verdict: FormatVerdict) -> int:
    return 1 if verdict.ok else 0


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

GENERATOR_TASK_RULES = """### Task: Create a Python Code Snippet (where custom classes are allowed, which should be defined at the top of the code snippet) with one Matching Input

Using the reference code snippets provided below as examples, design a new and unique Python code snippet that demands deep algorithmic reasoning to deduce one possible input from a given output. Your submission should include both a code snippet and test input pair, where the input will be plugged into the code snippet to produce the output, which that function output be given to a test subject to come up with any input that will produce the same function output. This is meant to be an I.Q. test.

### Code Requirements:

- Name the entry function `f` (e.g., `def f(...): ...`), you can have nested definitions inside `f`
- Ensure the function returns a value
- Include at least one input parameter
- Make the function deterministic
- Make the snippet require state tracking across multiple data transformations, ensuring the task requires long multi step reasoning
- AVOID THE FOLLOWING:
  * Random functions or variables
  * Date/time operations
  * I/O operations (reading files, network requests)
  * Printing or logging
  * Any external state
- Ensure execution completes within 10 seconds on a modern CPU
- All imports and class definitions should be at the very top of the code snippet
- The snippet should end with a return statement from the main function `f`, anything after will be removed

### Input Requirements:

- Provide exactly one test input for your function
- Format multiple arguments with commas between them
- Remember to add quotes around string arguments

### Formatting:

- Format your code with: ```python
  def f(...):
      # your code here
      return ...
  ```
- Format your input with: ```input
  arg1, arg2, ...
  ```

### Example Format:

```python
def f(name: str, info: dict):
    # code logic here
    return result
```

```input
'John', {'age': 20, 'city': 'New York'}
```

### Evaluation Criteria:

- Executability, your code should be executable given your input
- Difficulty in predicting the output from your provided input and code snippet. Focus on either algorithmic reasoning or logic complexity. For example, you can define complex data structure classes and operate on them like trees, heaps, stacks, queues, graphs, etc, or use complex control flow, dynamic programming, recursions, divide and conquer, greedy, backtracking, etc
- Creativity, the code needs to be sufficiently different from the provided reference snippets
- Restricted usage of certain keywords and packages, you are not allowed to use the following words in any form, even in comments: raise

First, carefully devise a clear plan: e.g., identify how your snippet will be challenging, distinct from reference snippets, and creative. Then, write the final code snippet and its inputs.
"""

DIFFICULTY_PREDICTION_RULES = """### Difficulty Prediction Requirements:

- At the end of your generation, you need to review your code and provide a difficulty prediction for the code.
- The difficulty prediction should be a number between 0 and 8, where 0 is the easiest and 8 is the hardest.
- The review of your code should be in the <review>...</review> tags. The review should focus on analyzing the difficulty of the code based on the complexity of the code, the number of steps required to solve the problem, the creativity of the code, as well as how powerful the current solver is.
- You need to control the difficulty of the generated tasks to be medium. A difficulty level at 4 or 5 would be good.
- The difficulty prediction should be wrapped in <difficulty_prediction> and </difficulty_prediction> tags. It should be strictly a number between 0 and 8. Otherwise, you will be penalized.
- Therefore, your response should be formatted like <think>...</think> <answer>...</answer> <review>...</review> <difficulty_prediction>...</difficulty_prediction>
"""

SOLVER_DEDUCTION_TEMPLATE = """### Task: Predict the Output of a Python Code Snippet

Given the following Python code snippet and its input, reason carefully about
what the entry function `f` returns, then give the returned value as a Python
literal.

```python
{code}
```

```input
{input_literal}
```

Respond with your reasoning in <think>...</think> tags followed by the
predicted return value, as a plain Python literal, in <answer>...</answer>
tags.
"""

SOLVER_ABDUCTION_TEMPLATE = """### Task: Find an Input for a Python Code Snippet

Given the following Python code snippet and an observed return value of the
entry function `f`, come up with any input that will produce the same function
output.

```python
{code}
```

Observed output:

```output
{output_repr}
```

Respond with your reasoning in <think>...</think> tags followed by the input
arguments, comma separated with quotes around string arguments, in
<answer>...</answer> tags.
"""


def render_generator_prompt(references: Sequence, config=None) -> str:
    """Assemble the full generator prompt around the given reference tasks.

    Each reference contributes its code and input verbatim as fenced blocks,
    in input order. Raises ValueError on an empty reference list: callers
    must seed the buffer before the first render.
    """
    if not references:
        raise ValueError("render_generator_prompt requires at least one reference task")
    parts: List[str] = [GENERATOR_TASK_RULES, "### Reference Code Snippets:\n"]
    for i, ref in enumerate(references):
        parts.append(f"Snippet {i + 1}:")
        parts.append(f"```python\n{ref.code}\n```")
        parts.append(f"```input\n{ref.input_literal}\n```")
    parts.append(DIFFICULTY_PREDICTION_RULES)
    return "\n\n".join(parts)


def render_solver_prompt(task, mode: str) -> str:
    if mode == "deduction":
        return SOLVER_DEDUCTION_TEMPLATE.format(
            code=task.code, input_literal=task.input_literal
        )
    if mode == "abduction":
        return SOLVER_ABDUCTION_TEMPLATE.format(
            code=task.code, output_repr=task.ground_truth_output
        )
    raise ValueError(f"unknown solve mode {mode!r}")


def render_generator_response(parse: GeneratorParse) -> str:
    """Render a canonical response for a parse (round-trip fixture support)."""
    return (
        f"<think>{parse.think}</think>\n"
        f"<answer>\n```python\n{parse.answer_code}\n```\n"
        f"```input\n{parse.answer_input}\n```\n</answer>\n"
        f"<review>{parse.review}</review>\n"
        f"<difficulty_prediction>{parse.difficulty_k}</difficulty_prediction>"
    )


def render_solver_response(parse: SolverParse) -> str:
    return f"<think>{parse.think}</think>\n<answer>{parse.answer}</answer>"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _locate_blocks(text: str, tags: Sequence[str]):
    """Find each <tag>...</tag> block; enforce presence and strict order.

    Returns (blocks, verdict). blocks maps tag -> inner text on success.
    """
    positions = []
    blocks = {}
    for tag in tags:
        open_tok, close_tok = f"<{tag}>", f"</{tag}>"
        start = text.find(open_tok)
        if start == -1:
            return None, FormatVerdict(ok=False, reason="missing_tag")
        end = text.find(close_tok, start + len(open_tok))
        if end == -1:
            return None, FormatVerdict(ok=False, reason="missing_tag")
        positions.extend((start, end))
        blocks[tag] = text[start + len(open_tok): end]
    if positions != sorted(positions) or len(set(positions)) != len(positions):
        return None, FormatVerdict(ok=False, reason="tag_order")
    return blocks, PASS


def scan_banned_keywords(code: str) -> Optional[str]:
    """Return the first banned keyword found in code (word-delimited), if any.

    The scan is case-sensitive and deliberately covers comments and strings:
    the ban applies to the token in any form.
    """
    for word in BANNED_KEYWORDS:
        if re.search(rf"\b{re.escape(word)}\b", code):
            return word
    return None


def parse_generator_response(text: str) -> Union[GeneratorParse, FormatVerdict]:
    blocks, verdict = _locate_blocks(text, TAG_SEQUENCE)
    if blocks is None:
        return verdict

    think = blocks["think"].strip()
    review = blocks["review"].strip()
    answer_region = blocks["answer"]

    code_fences = _CODE_FENCE_RE.findall(answer_region)
    if not code_fences:
        return FormatVerdict(ok=False, reason="empty_block")
    if len(code_fences) > 1:
        logger.warning("answer region has %d python fences; keeping the first",
                       len(code_fences))
    code = code_fences[0].strip()
    if not code:
        return FormatVerdict(ok=False, reason="empty_block")

    input_fences = _INPUT_FENCE_RE.findall(answer_region)
    if len(input_fences) > 1:
        return FormatVerdict(ok=False, reason="multiple_inputs")
    if not input_fences or not input_fences[0].strip():
        return FormatVerdict(ok=False, reason="empty_block")
    input_literal = input_fences[0].strip()

    if not _ENTRY_FUNCTION_RE.search(code):
        return FormatVerdict(ok=False, reason="no_entry_function")
    if scan_banned_keywords(code) is not None:
        return FormatVerdict(ok=False, reason="banned_keyword")

    raw_k = blocks["difficulty_prediction"].strip()
    if not _INTEGER_RE.match(raw_k):
        return FormatVerdict(ok=False, reason="bad_difficulty")
    k = int(raw_k)
    if not (DIFFICULTY_MIN <= k <= DIFFICULTY_MAX):
        return FormatVerdict(ok=False, reason="bad_difficulty")

    return GeneratorParse(
        think=think,
        answer_code=code,
        answer_input=input_literal,
        review=review,
        difficulty_k=k,
    )


def parse_solver_response(text: str, mode: str) -> Union[SolverParse, FormatVerdict]:
    """Extract think/answer blocks; no semantic validation of the answer."""
    if mode not in ("deduction", "abduction"):
        raise ValueError(f"unknown solve mode {mode!r}")
    blocks, verdict = _locate_blocks(text, ("think", "answer"))
    if blocks is None:
        return verdict
    answer = blocks["answer"].strip()
    if not answer:
        return FormatVerdict(ok=False, reason="empty_block")
    return SolverParse(think=blocks["think"].strip(), answer=answer)
