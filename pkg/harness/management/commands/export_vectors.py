from pathlib import Path

from harness.export import query_vectors, within_family_variance, write_exports
from harness.management.base import LabCommand
from harness.runs import load_state
from numeric.exceptions import DataIntegrityError
from tasks.splits import TEST_UNSEEN_TEMPLATE


class Command(LabCommand):
    help = 'Export per-layer injected-vector norms and per-query vectors with a 2-D PCA.'

    def add_arguments(self, parser):
        parser.add_argument('checkpoint')
        parser.add_argument('--split', default=TEST_UNSEEN_TEMPLATE)
        parser.add_argument('--out', default='vectors')

    def handle(self, *args, **options):
        state = load_state(options['checkpoint'])
        examples = state.splits.get(options['split'])
        if not examples:
            raise DataIntegrityError(f'no such split: {options["split"]}')
        qv = query_vectors(state, examples)
        write_exports(qv, state.method, Path(options['out']))
        for family, variance in within_family_variance(qv).items():
            self.stdout.write(f'{family:<10} within-family variance {variance:.3e}')
        self.done(f'{len(qv.uids)} {state.method} vectors exported to {options["out"]}')
