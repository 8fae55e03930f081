import click

from .. import __version__


@click.group(name='unetr', help='UNETR volumetric segmentation from first principles')
@click.version_option(__version__, prog_name='unetr')
def main():
    pass
