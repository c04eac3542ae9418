import time
from contextlib import contextmanager

import click


@contextmanager
def timer(string, verbose=True):
    start = time.perf_counter()
    yield
    duration = time.perf_counter() - start
    if verbose:
        time_string = f'{int(1000 * duration)} ms'
        click.echo(f'{time_string:>8} - {string.capitalize()}', err=True)
