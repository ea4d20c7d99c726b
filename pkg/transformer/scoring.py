"""Teacher-forced answer logits and option scoring."""
import numpy as np

from numeric import ops
from numeric.exceptions import ContractError

from .model import PROMPT_FINAL, InjectionHook, forward


def _with_anchor(hook, anchor):
    return InjectionHook(lam=hook.lam, vectors=hook.vectors, layers=hook.layers,
                         policy=hook.policy, anchor=anchor)


def answer_logits(model, prompt, answer, hook=None, **adapters):
    """Logits (one row per answer token) predicting ``answer`` after ``prompt``.

    Under the current-last policy every answer token is predicted by a pass in
    which the injection sits on the then-last position; under prompt-final the
    injection stays on the last prompt token and one pass covers all tokens.
    """
    prompt, answer = list(prompt), list(answer)
    if not prompt:
        raise ContractError('empty prompt')
    if not answer:
        raise ContractError('empty answer')
    start = len(prompt) - 1
    n = len(answer)
    steered = hook is not None and hook.active_layers(model.config.n_layers)
    if not steered or n == 1 or hook.policy == PROMPT_FINAL:
        if steered and hook.policy == PROMPT_FINAL:
            hook = _with_anchor(hook, start)
        trace = forward(model, prompt + answer[:-1], hook, **adapters)
        return trace.logits[start:start + n]
    rows = []
    for j in range(n):
        trace = forward(model, prompt + answer[:j], hook, **adapters)
        rows.append(trace.logits[start + j:start + j + 1])
    return ops.concat(rows)


def answer_loss(model, prompt, answer, hook=None, **adapters):
    return ops.cross_entropy(answer_logits(model, prompt, answer, hook, **adapters), answer)


def score_options(model, prompt, options, hook=None, **adapters):
    """Mean per-token log-likelihood of each option; argmax is the prediction."""
    options = [list(o) for o in options]
    if len(options) < 2:
        raise ContractError(f'need at least 2 options, got {len(options)}')
    if any(not o for o in options):
        raise ContractError('empty option')
    prompt = list(prompt)
    if all(len(o) == 1 for o in options):
        # single-token options are all predicted from the final prompt position,
        # which is also where either policy injects
        logits = forward(model, prompt, hook, **adapters).logits
        log_probs = ops.log_softmax_rows(logits[len(prompt) - 1:len(prompt)]).data[0]
        return [float(log_probs[o[0]]) for o in options]
    scores = []
    for option in options:
        logits = answer_logits(model, prompt, option, hook, **adapters)
        log_probs = ops.log_softmax_rows(logits).data
        scores.append(float(np.mean(log_probs[np.arange(len(option)), option])))
    return scores


def predict(model, prompt, options, hook=None, **adapters):
    scores = score_options(model, prompt, options, hook, **adapters)
    return int(np.argmax(scores)), scores
