"""Console script for tdodif."""
import sys
from pathlib import Path

import click


EXIT_CONFIGURATION = 2
EXIT_FORMAT = 3
EXIT_IO = 4


class TdodifGroup(click.Group):
    """Command group mapping pipeline errors to exit codes."""

    def invoke(self, ctx):
        from ..errors import FormatError
        try:
            return super().invoke(ctx)
        except FormatError as e:
            click.echo(f'Format error: {e}', err=True)
            ctx.exit(EXIT_FORMAT)
        except ValueError as e:
            click.echo(f'Configuration error: {e}', err=True)
            ctx.exit(EXIT_CONFIGURATION)
        except OSError as e:
            click.echo(f'I/O error: {e}', err=True)
            ctx.exit(EXIT_IO)


def get_config(ctx, **overrides):
    config = ctx.obj['config'].replace(**overrides)
    return config.validate()


def read_manifest(ctx, path):
    from .. import io
    return io.read_manifest(path, check=ctx.obj['check'])


@click.group(cls=TdodifGroup)
@click.option('--config', '-c', 'config_path', type=click.Path(dir_okay=False))
@click.option('--seed', '-s', type=int)
@click.option('--jobs', '-j', type=int)
@click.option(
    '--no-softmax-check',
    is_flag=True,
    help='Skip the check that probability channels sum to 1.',
)
@click.option(
    '--strict',
    is_flag=True,
    help='Fail instead of warning when probability channels do not sum to 1.',
)
@click.option(
    '--check/--no-check',
    default=False,
    show_default=True,
    help='Check that every file listed in a manifest exists before running.',
)
@click.option('--verbose/--no-verbose', '-v', type=bool, default=False, show_default=True)
@click.pass_context
def main(ctx, config_path, seed, jobs, no_softmax_check, strict, check, verbose):
    """Label diffusion and self-training for foggy scene segmentation."""
    from ..config import PipelineConfig, read_config
    if config_path is None:
        config = PipelineConfig()
    else:
        config = read_config(config_path)
    ctx.obj = dict(
        config=config.replace(
            seed=seed,
            jobs=jobs,
            softmax_check=False if no_softmax_check else None,
            strict=True if strict else None,
        ),
        seed=seed,
        check=check,
        verbose=verbose,
    )


@main.command()
@click.option('--spec', 'spec_path', type=click.Path(dir_okay=False))
@click.option('--out', '-o', 'out_dir', type=click.Path(file_okay=False), required=True)
@click.option('--beta', type=float)
@click.option('--frames', type=int)
@click.option('--sweep/--no-sweep', default=False, show_default=True)
@click.pass_context
def synth(ctx, spec_path, out_dir, beta, frames, sweep):
    """Render a synthetic clear source split and foggy target sequence."""
    from dataclasses import replace
    from .. import synth as synthesis
    from ..timer import timer
    spec = synthesis.SceneSpec()
    if spec_path is not None:
        spec = synthesis.read_scene_spec(spec_path)
    overrides = dict(seed=ctx.obj['seed'], beta=beta, frames=frames)
    spec = replace(spec, **{k: v for k, v in overrides.items() if v is not None})
    verbose = ctx.obj['verbose']
    with timer('Synthesis', verbose):
        if sweep:
            datasets = synthesis.emit_fog_sweep(spec, out_dir, verbose=verbose)
            for beta, dataset in datasets.items():
                click.echo(f'beta = {beta:g}: {dataset.target.path}')
        else:
            dataset = synthesis.emit_dataset(spec, out_dir, verbose=verbose)
            click.echo(f'Source manifest: {dataset.source.path}')
            click.echo(f'Target manifest: {dataset.target.path}')
            click.echo(f'Configuration: {dataset.config_path}')


@main.command()
@click.option('--image', '-i', 'image_path', type=click.Path(dir_okay=False), required=True)
@click.option('--out', '-o', 'output_path', type=click.Path(dir_okay=False), required=True)
@click.option('--k', '-k', type=int)
@click.option('--mc', type=float)
@click.option('--iters', type=int)
@click.pass_context
def slic(ctx, image_path, output_path, k, mc, iters):
    """Compute SLIC superpixels of an image."""
    from .. import io
    from ..slic import SlicParams, slic_segment
    from ..timer import timer
    config = get_config(ctx, k=k, mc=mc, slic_iters=iters)
    params = SlicParams(config.k, mc=config.mc, iters=config.slic_iters, seed=config.seed)
    image = io.read_rgb_png(image_path)
    with timer('SLIC', ctx.obj['verbose']):
        superpixels = slic_segment(image, params)
    io.write_superpixels(superpixels, output_path)
    click.echo(f'{superpixels.num_superpixels} superpixels')


@main.command()
@click.option('--manifest', '-m', 'manifest_path', type=click.Path(dir_okay=False), required=True)
@click.option('--out', '-o', 'output_path', type=click.Path(dir_okay=False), required=True)
@click.option('--p', '-p', type=float)
@click.option('--exact/--histogram', default=None)
@click.pass_context
def thresholds(ctx, manifest_path, output_path, p, exact):
    """Compute class-balanced confidence thresholds over a manifest."""
    from .. import io
    from ..pseudo import compute_thresholds
    config = get_config(ctx, p=p)
    manifest = read_manifest(ctx, manifest_path)
    probs = (
        io.read_prob(e.target_prob_path, **config.prob_options)
        for e in manifest.entries
    )
    result = compute_thresholds(
        probs,
        config.p,
        bins=config.bins,
        exact=exact,
        exact_limit=config.exact_limit,
    )
    io.write_thresholds(result, output_path)
    names = manifest.class_names
    for name, value in zip(names, result.values):
        click.echo(f'{name:<16}{value:.6f}')


@main.command()
@click.option('--manifest', '-m', 'manifest_path', type=click.Path(dir_okay=False))
@click.option('--probs', 'probs_path', type=click.Path(dir_okay=False))
@click.option('--thresholds', '-t', 'thresholds_path', type=click.Path(dir_okay=False))
@click.option('--out', '-o', 'output_path', type=click.Path(), required=True)
@click.option('--p', '-p', type=float)
@click.pass_context
def init(ctx, manifest_path, probs_path, thresholds_path, output_path, p):
    """
    Select initial pseudo labels, for one probability file (OUT is a PNG) or
    for every image of a manifest (OUT is a directory).
    """
    from .. import io
    from ..errors import ConfigurationError
    from ..pseudo import compute_thresholds, select_pseudo_labels
    config = get_config(ctx, p=p)
    if (manifest_path is None) == (probs_path is None):
        raise ConfigurationError('Pass either --manifest or --probs')
    if manifest_path is None:
        if thresholds_path is None:
            raise ConfigurationError('--probs needs --thresholds')
        probs = io.read_prob(probs_path, **config.prob_options)
        labels, _ = select_pseudo_labels(probs, io.read_thresholds(thresholds_path))
        io.write_label_png(labels, output_path)
        click.echo(f'{100 * labels.num_labeled / labels.array.size:.2f}% labeled')
        return
    manifest = read_manifest(ctx, manifest_path)
    probs = [
        io.read_prob(e.target_prob_path, **config.prob_options)
        for e in manifest.entries
    ]
    if thresholds_path is None:
        lambdas = compute_thresholds(
            probs,
            config.p,
            bins=config.bins,
            exact_limit=config.exact_limit,
        )
    else:
        lambdas = io.read_thresholds(thresholds_path)
    out_dir = Path(output_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry, prob_map in zip(manifest.entries, probs):
        labels, _ = select_pseudo_labels(prob_map, lambdas)
        io.write_label_png(labels, out_dir / f'{entry.stem}.png', palette=manifest.palette)
        fraction = labels.num_labeled / labels.array.size
        click.echo(f'{entry.stem}: {100 * fraction:.2f}% labeled')


@main.command('diffuse-spatial')
@click.option('--pred', 'prediction_path', type=click.Path(dir_okay=False), required=True)
@click.option('--init', 'initial_path', type=click.Path(dir_okay=False), required=True)
@click.option('--image', 'image_path', type=click.Path(dir_okay=False))
@click.option('--sp', 'superpixels_path', type=click.Path(dir_okay=False))
@click.option('--out', '-o', 'output_path', type=click.Path(dir_okay=False), required=True)
@click.option('--k', '-k', type=int)
@click.pass_context
def diffuse_spatial(ctx, prediction_path, initial_path, image_path, superpixels_path, output_path, k):
    """Diffuse pseudo labels within superpixels."""
    from .. import io
    from ..errors import ConfigurationError
    from ..slic import SlicParams, slic_segment
    from ..spatial import spatial_diffuse
    config = get_config(ctx, k=k)
    prediction = io.read_label_png(prediction_path)
    initial = io.read_label_png(initial_path)
    num_classes = max(prediction.num_classes, initial.num_classes)
    prediction = io.read_label_png(prediction_path, num_classes)
    initial = io.read_label_png(initial_path, num_classes)
    if superpixels_path is not None:
        superpixels = io.read_superpixels(superpixels_path)
    elif image_path is not None:
        params = SlicParams(config.k, mc=config.mc, iters=config.slic_iters, seed=config.seed)
        superpixels = slic_segment(io.read_rgb_png(image_path), params)
    else:
        raise ConfigurationError('Either --image or --sp is needed')
    diffused = spatial_diffuse(prediction, initial, superpixels)
    io.write_label_png(diffused, output_path)
    click.echo(f'{initial.num_labeled} -> {diffused.num_labeled} labeled pixels')


@main.command('diffuse-temporal')
@click.option('--target-init', '--init', 'initial_path', type=click.Path(dir_okay=False), required=True)
@click.option('--target-probs', '--probs', 'probs_path', type=click.Path(dir_okay=False), required=True)
@click.option('--ref-labels', 'reference_labels_path', type=click.Path(dir_okay=False), required=True)
@click.option('--ref-probs', 'reference_probs_path', type=click.Path(dir_okay=False), required=True)
@click.option('--flow', 'flow_path', type=click.Path(dir_okay=False), required=True)
@click.option('--conf', 'confidence_path', type=click.Path(dir_okay=False), required=True)
@click.option('--out', '-o', 'output_path', type=click.Path(dir_okay=False), required=True)
@click.option('--T', '-T', 'threshold', type=float)
@click.pass_context
def diffuse_temporal(
        ctx,
        initial_path,
        probs_path,
        reference_labels_path,
        reference_probs_path,
        flow_path,
        confidence_path,
        output_path,
        threshold,
        ):
    """Diffuse reference pseudo labels onto the target through optical flow."""
    from .. import io
    from ..temporal import flow_mask, warp_reference, temporal_fuse
    config = get_config(ctx, t=threshold)
    probs = io.read_prob(probs_path, **config.prob_options)
    reference_probs = io.read_prob(reference_probs_path, **config.prob_options)
    initial = io.read_label_png(initial_path, probs.num_classes)
    reference_labels = io.read_label_png(reference_labels_path, reference_probs.num_classes)
    confidence = io.read_conf(confidence_path)
    warped = warp_reference(
        reference_labels,
        reference_probs,
        io.read_flo(flow_path),
        flow_mask(confidence, config.t),
        confidence=confidence,
    )
    fusion = temporal_fuse(initial, probs, warped)
    io.write_label_png(fusion.labels, output_path)
    message = (
        f'{int(fusion.fused.sum())} fused, {int(fusion.copied.sum())} copied,'
        f' {fusion.labels.num_labeled} labeled pixels'
    )
    click.echo(message)


@main.command('round')
@click.option('--manifest', '-m', 'manifest_path', type=click.Path(dir_okay=False), required=True)
@click.option('--out-dir', '-o', type=click.Path(file_okay=False), required=True)
@click.option('--model', 'model_path', type=click.Path(dir_okay=False))
@click.option('--order', type=str)
@click.option('--index', 'round_index', type=int, default=1, show_default=True)
@click.pass_context
def round_(ctx, manifest_path, out_dir, model_path, order, round_index):
    """Generate the diffused pseudo labels of one self-training round."""
    from .. import io
    from ..evaluation import get_stats_table
    from ..pipeline import generate_round_labels
    config = get_config(ctx, order=order)
    manifest = read_manifest(ctx, manifest_path)
    model = None if model_path is None else io.read_model(model_path)
    round_labels = generate_round_labels(
        manifest,
        config,
        model=model,
        out_dir=out_dir,
        round_index=round_index,
        verbose=ctx.obj['verbose'],
    )
    table = get_stats_table(round_labels.record.stages)
    click.echo(table.to_string(index=False))


@main.command()
@click.option('--source', 'source_path', type=click.Path(dir_okay=False))
@click.option('--target', 'target_path', type=click.Path(dir_okay=False), required=True)
@click.option('--out-dir', '-o', type=click.Path(file_okay=False), required=True)
@click.option('--round', 'round_index', type=int)
@click.option('--rounds', type=int)
@click.option('--epochs', type=int)
@click.option('--order', type=str)
@click.pass_context
def selftrain(ctx, source_path, target_path, out_dir, round_index, rounds, epochs, order):
    """Run the full self-training loop."""
    from .. import io
    from ..pipeline import self_train, get_records_table
    config = get_config(ctx, rounds=rounds, epochs=epochs, order=order)
    source = None if source_path is None else read_manifest(ctx, source_path)
    target = read_manifest(ctx, target_path)
    result = self_train(
        source,
        target,
        config,
        out_dir,
        round_index=round_index,
        verbose=ctx.obj['verbose'],
    )
    table = get_records_table(result.records)
    click.echo(table.to_string(index=False))


@main.command()
@click.option('--manifest', '-m', 'manifest_path', type=click.Path(dir_okay=False), required=True)
@click.option('--out', '-o', 'output_path', type=click.Path(dir_okay=False), required=True)
@click.option('--labels-dir', type=click.Path(file_okay=False))
@click.option('--model', 'model_path', type=click.Path(dir_okay=False))
@click.option('--epochs', type=int)
@click.pass_context
def train(ctx, manifest_path, output_path, labels_dir, model_path, epochs):
    """
    Train the toy model on the ground truth of a manifest, or on the pseudo
    labels in LABELS_DIR.
    """
    import torch
    from .. import io
    from ..pipeline import get_source_images, train_epochs
    from ..toymodel import ToyModel, OptimizerState, TrainingImage
    config = get_config(ctx, epochs=epochs)
    manifest = read_manifest(ctx, manifest_path)
    if labels_dir is None:
        images = get_source_images(manifest)
    else:
        images = []
        for entry in manifest.entries:
            labels_path = Path(labels_dir) / f'{entry.stem}.png'
            images.append(TrainingImage(
                io.read_rgb_png(entry.target_image_path),
                io.read_label_png(labels_path, manifest.num_classes),
                domain='target',
                name=entry.stem,
            ))
    if model_path is None:
        model = ToyModel.initialize(manifest.num_classes, hidden=config.hidden, seed=config.seed)
    else:
        model = io.read_model(model_path)
    optimizer = OptimizerState.for_model(
        model,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
    )
    generator = torch.Generator().manual_seed(config.seed)
    model, _, reports = train_epochs(
        model,
        optimizer,
        images,
        config,
        generator,
        config.epochs,
        'Epochs',
        ctx.obj['verbose'],
    )
    io.write_model(model, output_path)
    for epoch, report in enumerate(reports, start=1):
        click.echo(f'Epoch {epoch:>3}: {report.l_final:.6f}')


@main.command('eval')
@click.option('--manifest', '-m', 'manifest_path', type=click.Path(dir_okay=False), required=True)
@click.option('--pred-dir', type=click.Path(file_okay=False), required=True)
@click.option('--stats/--no-stats', default=False, show_default=True)
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False))
@click.option('--confusion', 'confusion_path', type=click.Path(dir_okay=False))
@click.pass_context
def evaluate(ctx, manifest_path, pred_dir, stats, csv_path, confusion_path):
    """Compute per-class IoU and mIoU of predictions in PRED_DIR."""
    from .. import io
    from ..errors import ConfigurationError
    from ..evaluation import (
        ConfusionMatrix,
        PseudoLabelStats,
        confusion,
        get_confusion_table,
        get_iou_table,
        miou,
        pseudo_stats,
    )
    manifest = read_manifest(ctx, manifest_path)
    num_classes = manifest.num_classes
    matrix = ConfusionMatrix.empty(num_classes)
    label_stats = PseudoLabelStats.empty_stats(num_classes)
    for entry in manifest.entries:
        if entry.gt_label_path is None:
            raise ConfigurationError(f'{entry.target_image_path} has no ground truth')
        gt = io.read_label_png(entry.gt_label_path, num_classes)
        prediction = io.read_label_png(Path(pred_dir) / f'{entry.stem}.png', num_classes)
        matrix = matrix + confusion(gt, prediction, num_classes=num_classes)
        if stats:
            label_stats = label_stats + pseudo_stats(prediction, gt)
    table = get_iou_table(matrix, manifest.class_names)
    _, mean = miou(matrix)
    click.echo(table.to_string(index=False))
    click.echo(f'mIoU: {mean:.4f}')
    if stats:
        click.echo(f'Labeled fraction: {label_stats.labeled_fraction:.4f}')
        click.echo(f'Pseudo-label mIoU: {label_stats.pseudo_miou:.4f}')
        if label_stats.empty:
            click.echo('No labeled pixels to evaluate')
    if csv_path is not None:
        table.to_csv(csv_path, index=False)
    if confusion_path is not None:
        get_confusion_table(matrix, manifest.class_names).to_csv(confusion_path)


@main.command()
@click.option('--features', 'features_path', type=click.Path(dir_okay=False), required=True)
@click.option('--ref-features', 'reference_path', type=click.Path(dir_okay=False), required=True)
@click.option('--sp', 'superpixels_path', type=click.Path(dir_okay=False), required=True)
@click.option('--hit', 'hit_path', type=click.Path(dir_okay=False), required=True)
@click.option('--pred', 'prediction_path', type=click.Path(dir_okay=False), required=True)
@click.pass_context
def losses(ctx, features_path, reference_path, superpixels_path, hit_path, prediction_path):
    """
    Evaluate the spatial and temporal losses on stored feature maps, taking
    the same pixel in both maps as temporal correspondence.
    """
    import torch
    from .. import io
    from ..core import check_same_shape
    from ..losses import LossReport, spatial_loss, temporal_loss, sample_correspondences
    from ..slic import downsample_superpixels
    config = get_config(ctx)
    features = io.read_features(features_path)
    reference = io.read_features(reference_path)
    check_same_shape(features.shape, reference.shape)
    height, width = features.shape
    superpixels = downsample_superpixels(io.read_superpixels(superpixels_path), width, height)
    hit = io.read_mask_png(hit_path)
    prediction = io.read_label_png(prediction_path)
    generator = torch.Generator().manual_seed(config.seed)
    sample = sample_correspondences(hit, prediction, config.n_pos, config.n_neg, generator)
    report = LossReport(
        l_spa=spatial_loss(features, superpixels).value,
        l_tem=temporal_loss(features, reference, sample).value,
        alpha_t=config.alpha_t,
        alpha_spa=config.alpha_spa,
        alpha_tem=config.alpha_tem,
    )
    click.echo(report.format())


@main.command()
@click.argument('labels-path', type=click.Path(dir_okay=False))
@click.argument('output-path', type=click.Path(dir_okay=False))
@click.option('--image', 'image_path', type=click.Path(dir_okay=False))
@click.option('--manifest', '-m', 'manifest_path', type=click.Path(dir_okay=False))
@click.pass_context
def viz(ctx, labels_path, output_path, image_path, manifest_path):
    """Render a label map in color, optionally over its image."""
    from .. import io
    from ..pipeline import visualize
    from ..synth import PALETTE
    if manifest_path is None:
        palette = PALETTE
        labels = io.read_label_png(labels_path)
    else:
        manifest = read_manifest(ctx, manifest_path)
        palette = manifest.palette
        labels = io.read_label_png(labels_path, manifest.num_classes)
    image = None if image_path is None else io.read_rgb_png(image_path)
    io.write_rgb_png(visualize(labels, palette, image=image), output_path)


if __name__ == "__main__":
    # pylint: disable=no-value-for-parameter
    sys.exit(main())  # pragma: no cover
