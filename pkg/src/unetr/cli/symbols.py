import click

spin = click.style('⟳', fg='cyan')
chk = click.style('✔', fg='green')
err = click.style('✘', fg='red')
wrn = click.style('⚠', fg='yellow')
info = click.style('ℹ', fg='blue')
watch = click.style('⏱', fg='cyan')
