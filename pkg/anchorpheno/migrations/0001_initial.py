from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('command', models.CharField(max_length=32)),
                ('seed', models.IntegerField(blank=True, null=True)),
                ('config_hash', models.CharField(blank=True, max_length=12)),
                ('out_dir', models.CharField(blank=True, max_length=512)),
                ('status', models.CharField(choices=[('success', 'success'), ('error', 'error')], max_length=16)),
                ('error', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
            },
        ),
    ]
