"""Layer-region and generator-capacity ablations of a trained ATV."""
import logging
from dataclasses import replace

from atv.adapter import with_layers
from numeric.exceptions import ContractError
from tasks.splits import TEST_UNSEEN_TEMPLATE

from .config import layer_mask
from .evaluation import evaluate
from .methods import ATV, build_backbone, build_method, prepare_data, train_method

logger = logging.getLogger(__name__)

LAYER_REGIONS = ('all', 'bottom_third', 'middle_third', 'top_third')
CONTROL = 'none'


def _mask_label(layers, n_layers):
    layers = range(n_layers) if layers is None else sorted(layers)
    return ','.join(str(l) for l in layers)


def ablate_layers(state, split=TEST_UNSEEN_TEMPLATE):
    """Accuracy with injection restricted to each third of the backbone.

    ``diff_vs_all`` is measured against injecting everywhere; the final row
    (empty mask) is the zero-shot control.
    """
    if state.method != ATV:
        raise ContractError(f'layer ablation needs an ATV checkpoint, got {state.method!r}')
    n_layers = state.large.config.n_layers
    trained = state.atv
    rows = []
    baseline = None
    for region in LAYER_REGIONS + (CONTROL,):
        layers = layer_mask(region, n_layers)
        masked = replace(state, atv=with_layers(trained, layers))
        accuracy = evaluate(masked, [split]).pooled_accuracy()
        baseline = accuracy if baseline is None else baseline
        rows.append({'mask': region, 'layers': _mask_label(layers, n_layers), 'split': split,
                     'accuracy': accuracy, 'diff_vs_all': accuracy - baseline})
        logger.info('layers %s: accuracy %.3f (%+.3f vs all)', region, accuracy, accuracy - baseline)
    return rows


def ablate_capacity(config, seed, ladder=None, split=TEST_UNSEEN_TEMPLATE):
    """Train one ATV per generator width on the same data, backbone and seed."""
    ladder = list(ladder or config['capacity.ladder'])
    splits, vocab = prepare_data(config, seed)
    large = build_backbone(config, vocab, splits, seed)
    rows = []
    for width in ladder:
        rung = config.with_values(**{'method': ATV, 'generator.d_model': width,
                                     'generator.ffn_dim': 4 * width})
        state = build_method(rung, seed, large, vocab, splits, method=ATV)
        report = train_method(state)
        accuracy = evaluate(state, [split]).pooled_accuracy()
        rows.append({'d_small': width, 'n_layers': rung['generator.n_layers'],
                     'parameters': state.atv.num_parameters(), 'seed': seed, 'split': split,
                     'final_loss': report.epoch_losses[-1] if report.epoch_losses else float('nan'),
                     'accuracy': accuracy})
        logger.info('generator width %d (%d parameters): accuracy %.3f', width,
                    rows[-1]['parameters'], accuracy)
    return rows
