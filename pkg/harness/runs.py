"""
One training run per (config, seed), laid out on disk as

    <out>/<method>-seed<seed>/
        checkpoint.atvckpt  losses.csv  config.txt  resolved_config.txt  vocab.json
"""
import csv
import logging
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .methods import build_backbone, build_method, prepare_data, state_from_checkpoint, train_method
from .persistence import finish_run, record_failure, record_losses, record_run_start

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.atvckpt'
# not stored in checkpoints
RUN_LOCAL_KEYS = ('out',)


def run_dir_for(out_root, method, seed):
    return Path(out_root) / f'{method}-seed{seed}'


def checkpoint_meta(state):
    return {
        'method': state.method,
        'seed': state.seed,
        'config': state.config.to_text(exclude=RUN_LOCAL_KEYS),
        'vocab': list(state.vocab.itos),
    }


def write_losses(path, report):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['method', 'epoch', 'mean_loss'])
        for epoch, loss in enumerate(report.epoch_losses, start=1):
            writer.writerow([report.method, epoch, repr(float(loss))])


def train_run(config, seed, out_root=None):
    """Train ``config.method`` for one seed and write its run directory."""
    run_dir = run_dir_for(out_root or config['out'], config.method, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_id = record_run_start(config, seed, run_dir)
    try:
        splits, vocab = prepare_data(config, seed)
        large = build_backbone(config, vocab, splits, seed)
        state = build_method(config, seed, large, vocab, splits)
        report = train_method(state)
        digest = save_checkpoint(run_dir / CHECKPOINT_NAME, state.arrays(), checkpoint_meta(state))
    except Exception:
        if run_id is not None:
            record_failure(run_id)
        raise
    write_losses(run_dir / 'losses.csv', report)
    (run_dir / 'config.txt').write_text(config.source, encoding='utf-8')
    (run_dir / 'resolved_config.txt').write_text(config.to_text(), encoding='utf-8')
    (run_dir / 'vocab.json').write_text(vocab.to_json(), encoding='utf-8')
    if run_id is not None:
        record_losses(run_id, report)
    finish_run(run_id, digest)
    logger.info('%s seed %d written to %s', config.method, seed, run_dir)
    return run_dir, report


def checkpoint_path(path):
    """Accepts a checkpoint file or the run directory holding one."""
    path = Path(path)
    return path / CHECKPOINT_NAME if path.is_dir() else path


def load_state(path):
    return state_from_checkpoint(load_checkpoint(checkpoint_path(path)))
