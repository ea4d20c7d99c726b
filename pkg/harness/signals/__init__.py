from django.dispatch import Signal

run_finished = Signal()
