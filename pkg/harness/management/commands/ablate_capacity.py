from pathlib import Path

from harness.ablation import ablate_capacity
from harness.evaluation import write_dict_rows
from harness.management.base import LabCommand
from tasks.splits import TEST_UNSEEN_TEMPLATE

FIELDS = ['d_small', 'n_layers', 'parameters', 'seed', 'split', 'final_loss', 'accuracy']


class Command(LabCommand):
    help = 'Train one ATV per generator width of capacity.ladder on identical data and seeds.'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--seed', type=int, action='append', dest='seeds')
        parser.add_argument('--split', default=TEST_UNSEEN_TEMPLATE)
        parser.add_argument('--out', default='ablations')

    def handle(self, *args, **options):
        config = self.run_config(options)
        rows = []
        for seed in options['seeds'] or config.seeds:
            rows += ablate_capacity(config, seed, split=options['split'])
        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)
        write_dict_rows(out / 'capacity.csv', rows, FIELDS)
        for row in rows:
            self.stdout.write(f"d_s={row['d_small']:<4} params={row['parameters']:<8} "
                              f"seed={row['seed']:<4} accuracy={row['accuracy']:.3f}")
        self.done(f'capacity ablation written to {out / "capacity.csv"}')
