import logging

from django.dispatch import receiver
from django.utils import timezone

from harness.models import Run
from harness.signals import run_finished

logger = logging.getLogger(__name__)


@receiver(run_finished)
def mark_run_complete(sender, run_id, digest, **kwargs):
    updated = Run.objects.filter(pk=run_id).update(
        status=Run.STATUS_COMPLETE, checkpoint_digest=digest, finished_at=timezone.now())
    if updated:
        logger.info('run %s complete (checkpoint %s)', run_id, digest[:12])
