from django.db import models


def defaultJsonField():
    return {}


class Run(models.Model):
    STATUS_PENDING = 'P'
    STATUS_COMPLETE = 'C'
    STATUS_FAILED = 'F'
    STATUS_CHOICES = [
        (STATUS_PENDING, 'Pending'),
        (STATUS_COMPLETE, 'Complete'),
        (STATUS_FAILED, 'Failed')
    ]

    method = models.CharField(max_length=32)
    seed = models.IntegerField()
    status = models.CharField(
        max_length=1, choices=STATUS_CHOICES, default=STATUS_PENDING)
    run_dir = models.CharField(max_length=1024)
    config = models.JSONField(default=defaultJsonField)
    checkpoint_digest = models.CharField(max_length=64, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    def __str__(self) -> str:
        return f'{self.method} seed={self.seed}'

    class Meta:
        ordering = ['-created_at']


class EpochLoss(models.Model):
    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name='losses')
    epoch = models.PositiveIntegerField()
    mean_loss = models.FloatField()

    class Meta:
        ordering = ['run', 'epoch']
        unique_together = [['run', 'epoch']]


class EvalRow(models.Model):
    run = models.ForeignKey(
        Run, on_delete=models.SET_NULL, null=True, blank=True, related_name='eval_rows')
    method = models.CharField(max_length=32)
    family = models.CharField(max_length=32)
    split = models.CharField(max_length=32)
    template_id = models.PositiveSmallIntegerField()
    prefix_id = models.PositiveSmallIntegerField()
    seed = models.IntegerField()
    n = models.PositiveIntegerField()
    accuracy = models.FloatField()
    mean_prompt_tokens = models.FloatField()

    class Meta:
        ordering = ['method', 'family', 'split', 'template_id', 'prefix_id', 'seed']


class TheoryCheck(models.Model):
    batch = models.CharField(max_length=64)
    theorem = models.CharField(max_length=16)
    trial = models.PositiveIntegerField()
    check_name = models.CharField(max_length=32)
    max_rel_err = models.FloatField()
    passed = models.BooleanField()

    class Meta:
        ordering = ['batch', 'theorem', 'trial', 'check_name']
