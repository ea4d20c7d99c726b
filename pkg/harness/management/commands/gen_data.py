from pathlib import Path

from harness.management.base import LabCommand
from harness.methods import prepare_data
from tasks.splits import export_jsonl


class Command(LabCommand):
    help = 'Write the generated task splits of one seed as JSONL.'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--seed', type=int, help='defaults to the first config seed')
        parser.add_argument('--out', help='JSONL file; stdout when omitted')

    def handle(self, *args, **options):
        config = self.run_config(options)
        seed = config.seeds[0] if options['seed'] is None else options['seed']
        splits, _ = prepare_data(config, seed)
        if options['out']:
            path = Path(options['out'])
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as stream:
                count = export_jsonl(splits, stream)
            self.done(f'{count} examples for seed {seed} written to {path}')
        else:
            export_jsonl(splits, self.stdout)
