from pathlib import Path

from harness.evaluation import EvalReport, comparison_table, evaluate, summarize, write_dict_rows
from harness.management.base import LabCommand
from harness.persistence import record_eval_rows
from harness.runs import checkpoint_path, load_state
from tasks.splits import EVAL_SPLITS


class Command(LabCommand):
    help = ('Evaluate checkpoints on every template x prefix variant; several '
            'checkpoints are aggregated as mean +- std over seeds.')

    def add_arguments(self, parser):
        parser.add_argument('checkpoints', nargs='+', help='checkpoint files or run directories')
        parser.add_argument('--splits', default=','.join(EVAL_SPLITS),
                            help='comma separated evaluation splits')
        parser.add_argument('--out', default='eval', help='directory for the report files')

    def handle(self, *args, **options):
        split_names = [s.strip() for s in options['splits'].split(',') if s.strip()]
        paths = [checkpoint_path(p) for p in options['checkpoints']]
        report = EvalReport()
        for path in paths:
            report.extend(evaluate(load_state(path), split_names))

        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / 'eval_rows.csv')
        report.write_predictions(out / 'predictions.jsonl')
        summary = summarize(report)
        write_dict_rows(out / 'summary.csv', summary,
                        ['method', 'split', 'template_group', 'seeds', 'mean', 'std'])
        methods = sorted({r.method for r in report.rows})
        write_dict_rows(out / 'comparison.csv', comparison_table(report, methods),
                        ['method', 'in_domain', 'unseen', 'average'])
        record_eval_rows(report, [p.parent for p in paths])

        for row in summary:
            self.stdout.write(f"{row['method']:>9} {row['split']:<22} {row['template_group']:<9} "
                              f"{row['mean']:.3f} +- {row['std']:.3f} ({row['seeds']} seeds)")
        self.done(f'{len(report.rows)} rows written to {out}')
