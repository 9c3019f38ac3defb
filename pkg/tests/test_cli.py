import json
import math

import pytest

from ramlab.cli import build_parser, main


def _run(capsys, *argv):
    status = main(list(argv))
    out, err = capsys.readouterr()
    return status, out, err


class TestParser:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 2

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(['--version'])
        assert exc.value.code == 0
        assert "ramlab" in capsys.readouterr().out


class TestPresetsCommand:
    def test_json_listing(self, capsys):
        status, out, _ = _run(capsys, 'presets', '--json')
        assert status == 0
        listing = json.loads(out)
        names = [p['name'] for p in listing['presets']]
        assert 'student2d-paper' in names and 'mixture-d' in names

    def test_table(self, capsys):
        status, out, _ = _run(capsys, 'presets')
        assert status == 0
        assert 'Initial factors: identity = 1*I' in out


class TestDiagCommands:
    def test_suboptimality(self, capsys):
        status, out, _ = _run(capsys, 'diag', 'b', '--R', '[[1, 0], [0, 4]]', '--Sigma', '[[1, 0], [0, 1]]')
        assert status == 0
        assert json.loads(out)['b'] == pytest.approx(10 / 9)

    def test_bad_matrix_is_config_error(self, capsys):
        status, _, err = _run(capsys, 'diag', 'b', '--R', '[[1, 0]', '--Sigma', '[[1]]')
        assert status == 2
        report = json.loads(err[err.index('{'):])
        assert report['error'] == 'ParseError' and report['field'] == 'R'

    def test_hpd_on_chain_file(self, capsys, tmp_path):
        assert _run(capsys, 'run', '--preset', 'student2d-paper', '--algo', 'ram', '--reps', '1', '--burnin', '0',
                    '--iters', '2000', '--out', str(tmp_path))[0] == 0
        status, out, _ = _run(capsys, 'diag', 'hpd', '--chain', str(tmp_path / "chains" / "ram_rep0000.csv"),
                              '--preset', 'student2d-paper', '--burnin', '1000')
        assert status == 0
        result = json.loads(out)
        assert result['threshold'] == pytest.approx(99.0, rel=1e-9)
        assert result['samples'] == 100
        assert 0.0 <= result['outside_fraction'] <= 1.0


class TestVerifyCommands:
    def test_lyapunov_value(self, capsys):
        status, out, _ = _run(capsys, 'verify', 'lyapunov', '--R', '[[2, 0], [0, 1]]', '--Rstar', '[[1, 0], [0, 1]]')
        assert status == 0
        assert json.loads(out)['lyapunov_value'] == pytest.approx(1 - math.log(2))

    def test_lyapunov_not_positive_definite(self, capsys):
        status, _, err = _run(capsys, 'verify', 'lyapunov', '--R', '[[1, 2], [2, 1]]', '--Rstar', '[[1, 0], [0, 1]]')
        assert status == 1
        assert 'NotPositiveDefinite' in err

    def test_lyapunov_descent(self, capsys):
        status, out, _ = _run(capsys, 'verify', 'lyapunov', '--R', '[[100, 0], [0, 0.01]]',
                              '--Rstar', '[[4, 0], [0, 4]]', '--descent', '--samples', '20000')
        assert status == 0
        result = json.loads(out)
        assert result['descent_inner_product'] < 0

    def test_mean_field_small_scale_positive(self, capsys):
        status, out, _ = _run(capsys, 'verify', 'mean-field', '--theta', '0.1', '--samples', '20000')
        assert status == 0
        result = json.loads(out)
        assert result['trace'] > 3 * result['trace_standard_error']
        assert min(result['eigenvalues']) > 0

    def test_g_limits(self, capsys):
        status, out, _ = _run(capsys, 'verify', 'g', '--theta', '0.001,1000', '--samples', '20000')
        assert status == 0
        small, large = json.loads(out)['estimates']
        assert small['g'] >= 0.95 and large['g'] <= 0.05

    def test_stable_point(self, capsys):
        status, out, _ = _run(capsys, 'verify', 'stable-point', '--dim', '1', '--proposal', 'gaussian',
                              '--alpha-star', '0.44', '--tol', '0.01', '--samples', '20000')
        assert status == 0
        assert 1.5 <= json.loads(out)['theta_star'] <= 4.0

    def test_affine(self, capsys):
        status, out, _ = _run(capsys, 'verify', 'affine', '--trials', '2', '--steps', '200')
        assert status == 0
        result = json.loads(out)
        assert result['passed'] and len(result['trials']) == 2


class TestRunCommand:
    def test_unknown_preset(self, capsys, tmp_path):
        status, _, err = _run(capsys, 'run', '--preset', 'nope', '--out', str(tmp_path))
        assert status == 2
        report = json.loads(err[err.index('{'):])
        assert report['error'] == 'ValidationError'
        assert any('available presets' in e for e in report['errors'])

    def test_fixed_dimension_violation(self, capsys, tmp_path):
        status, _, err = _run(capsys, 'run', '--preset', 'student2d-paper', '--dim', '3', '--out', str(tmp_path))
        assert status == 2

    def test_config_file_with_flag_override(self, capsys, tmp_path):
        config = tmp_path / "experiment.toml"
        config.write_text('preset = "mixture-d"\nreplications = 2\nburn_in = 0\niterations = 100000\n'
                          'algorithms = ["ram"]\n')
        status, out, _ = _run(capsys, 'run', '--config', str(config), '--iters', '500', '--out', str(tmp_path / "r"))
        assert status == 0
        result = json.loads(out)
        experiment = json.loads((tmp_path / "r" / "experiment.json").read_text())
        assert experiment['iterations'] == 500
        assert result['aggregate'].endswith("aggregate.json")

    def test_missing_config_file(self, capsys, tmp_path):
        status, _, _ = _run(capsys, 'run', '--config', str(tmp_path / "absent.toml"))
        assert status == 2


def test_report_command(capsys, tmp_path):
    assert _run(capsys, 'run', '--preset', 'student2d-paper', '--algo', 'ram,aswam', '--reps', '2', '--burnin', '0',
                '--iters', '1000', '--out', str(tmp_path))[0] == 0
    status, out, _ = _run(capsys, 'report', '--run-dir', str(tmp_path))
    assert status == 0
    pdf = tmp_path / "aggregate.pdf"
    assert json.loads(out)['report'] == str(pdf)
    assert pdf.read_bytes().startswith(b"%PDF")
