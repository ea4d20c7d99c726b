"""
Prompt rendering: three question templates per family times three answer
prefixes gives nine variants of every example. Training renders only use
``TRAIN_TEMPLATE`` with the ``A:`` prefix.
"""
from dataclasses import dataclass

from numeric.exceptions import ContractError

from .families import get_family

ANSWER_PREFIXES = ('A:', 'Answer:', 'The answer is')
OPTION_LABELS = ('(A)', '(B)', '(C)', '(D)', '(E)')
NEWLINE = '\n'
SEP = f' {NEWLINE} '

TRAIN_TEMPLATE = 0
TRAIN_PREFIX = 0
HELD_OUT_TEMPLATES = (1, 2)
# stands where an answer prefix would in pretraining statements; never in a prompt
STATEMENT_CUE = '=>'


@dataclass(frozen=True)
class TemplateSet:
    questions: tuple
    prefixes: tuple = ANSWER_PREFIXES

    def __post_init__(self):
        if len(self.questions) != 3 or len(self.prefixes) != 3:
            raise ContractError('a template set has exactly 3 questions and 3 answer prefixes')

    def variants(self):
        return [(t, p) for t in range(len(self.questions)) for p in range(len(self.prefixes))]


def template_set(family_name):
    return TemplateSet(get_family(family_name).questions)


def template_group(template_id):
    return 'train' if template_id == TRAIN_TEMPLATE else 'held_out'


def options_line(options):
    return 'Options: ' + ' , '.join(f'{label} {opt}' for label, opt in zip(OPTION_LABELS, options))


def render_prompt(example, template_id, prefix_id):
    """Returns (prompt text, answer texts) for one of the nine variants."""
    templates = template_set(example.family)
    if template_id not in range(len(templates.questions)):
        raise ContractError(f'template id {template_id} not in 0..2')
    if prefix_id not in range(len(templates.prefixes)):
        raise ContractError(f'answer prefix id {prefix_id} not in 0..2')
    question = templates.questions[template_id].format(items=example.question)
    prompt = SEP.join([question, options_line(example.options), templates.prefixes[prefix_id]])
    return prompt, list(example.options)


def render_training(example):
    return render_prompt(example, TRAIN_TEMPLATE, TRAIN_PREFIX)


def render_demonstration(example):
    """Training-template rendering followed by the gold answer."""
    prompt, answers = render_training(example)
    return f'{prompt} {answers[example.gold]}'


def render_statement(example, template_id):
    """Question and options, then ``STATEMENT_CUE`` and the gold answer."""
    prompt, answers = render_prompt(example, template_id, TRAIN_PREFIX)
    head = prompt.rsplit(SEP, 1)[0]
    return SEP.join([head, STATEMENT_CUE]) + f' {answers[example.gold]}'
