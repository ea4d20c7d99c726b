from django.db import migrations, models
import django.db.models.deletion
import harness.models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Run',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('method', models.CharField(max_length=32)),
                ('seed', models.IntegerField()),
                ('status', models.CharField(choices=[('P', 'Pending'), ('C', 'Complete'), ('F', 'Failed')], default='P', max_length=1)),
                ('run_dir', models.CharField(max_length=1024)),
                ('config', models.JSONField(default=harness.models.defaultJsonField)),
                ('checkpoint_digest', models.CharField(blank=True, max_length=64)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='TheoryCheck',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('batch', models.CharField(max_length=64)),
                ('theorem', models.CharField(max_length=16)),
                ('trial', models.PositiveIntegerField()),
                ('check_name', models.CharField(max_length=32)),
                ('max_rel_err', models.FloatField()),
                ('passed', models.BooleanField()),
            ],
            options={
                'ordering': ['batch', 'theorem', 'trial', 'check_name'],
            },
        ),
        migrations.CreateModel(
            name='EvalRow',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('method', models.CharField(max_length=32)),
                ('family', models.CharField(max_length=32)),
                ('split', models.CharField(max_length=32)),
                ('template_id', models.PositiveSmallIntegerField()),
                ('prefix_id', models.PositiveSmallIntegerField()),
                ('seed', models.IntegerField()),
                ('n', models.PositiveIntegerField()),
                ('accuracy', models.FloatField()),
                ('mean_prompt_tokens', models.FloatField()),
                ('run', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='eval_rows', to='harness.run')),
            ],
            options={
                'ordering': ['method', 'family', 'split', 'template_id', 'prefix_id', 'seed'],
            },
        ),
        migrations.CreateModel(
            name='EpochLoss',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.PositiveIntegerField()),
                ('mean_loss', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='losses', to='harness.run')),
            ],
            options={
                'ordering': ['run', 'epoch'],
                'unique_together': {('run', 'epoch')},
            },
        ),
    ]
