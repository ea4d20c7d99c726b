from pathlib import Path

from harness.ablation import ablate_layers
from harness.evaluation import write_dict_rows
from harness.management.base import LabCommand
from harness.runs import load_state
from tasks.splits import TEST_UNSEEN_TEMPLATE


class Command(LabCommand):
    help = 'Re-evaluate an ATV checkpoint with injection limited to each third of the backbone.'

    def add_arguments(self, parser):
        parser.add_argument('checkpoint')
        parser.add_argument('--split', default=TEST_UNSEEN_TEMPLATE)
        parser.add_argument('--out', default='ablations')

    def handle(self, *args, **options):
        rows = ablate_layers(load_state(options['checkpoint']), split=options['split'])
        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)
        write_dict_rows(out / 'layers.csv', rows, ['mask', 'layers', 'split', 'accuracy', 'diff_vs_all'])
        for row in rows:
            self.stdout.write(f"{row['mask']:<13} {row['accuracy']:.3f} ({row['diff_vs_all']:+.3f})")
        self.done(f'layer ablation written to {out / "layers.csv"}')
