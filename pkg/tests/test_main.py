import numpy as np
import pytest

from config import save_config
from evaluation import MetricsTable, read_embeddings
from main import build_parser, main, read_features


@pytest.fixture
def config_file(tmp_path, make_config):
    path = tmp_path / 'config.json'
    save_config(make_config(train={'epochs': 1}), path)
    return str(path)


def test_cluster_bench(tmp_path):
    rng = np.random.default_rng(0)
    features = tmp_path / 'features.txt'
    np.savetxt(features, rng.normal(size=(6, 3)))
    out = tmp_path / 'groups.txt'
    assert main(['cluster-bench', '--features', str(features), '--groups', '3', '--out', str(out)]) == 0

    lines = out.read_text().splitlines()
    pairs = [tuple(map(int, line.split())) for line in lines[:-1]]
    assert [user for user, _ in pairs] == list(range(6))
    assert sorted(group for _, group in pairs) == [0, 0, 1, 1, 2, 2]
    assert lines[-1].startswith('# total_cost ')
    assert float(lines[-1].split()[-1]) >= 0.0


def test_cluster_bench_reads_npy(tmp_path):
    path = tmp_path / 'features.npy'
    np.save(path, np.eye(4) + 0.1)
    assert read_features(str(path)).shape == (4, 4)


def test_cluster_bench_rejects_unbalanced_input(tmp_path, capsys):
    features = tmp_path / 'features.txt'
    np.savetxt(features, np.random.default_rng(1).normal(size=(5, 2)))
    code = main(['cluster-bench', '--features', str(features), '--groups', '2', '--out', str(tmp_path / 'o')])
    assert code == 2
    assert 'error' in capsys.readouterr().err


def test_train_eval_and_diagnostics(tmp_path, config_file):
    out = tmp_path / 'run'
    assert main(['train', '--config', config_file, '--out', str(out)]) == 0
    checkpoint = str(out / 'checkpoint_epoch0001.pt')

    table_path = tmp_path / 'table.jsonl'
    assert main(['eval', '--checkpoint', checkpoint, '--snr-grid', '0,18', '--channel', 'rician',
                 '--seeds', '0,1', '--out', str(table_path)]) == 0
    table = MetricsTable.read(table_path)
    assert len(table.rows) == 4
    assert {r.channel_model for r in table.rows} == {'rician'}

    embeddings = tmp_path / 'embeddings.jsonl'
    assert main(['export-embeddings', '--checkpoint', checkpoint, '--out', str(embeddings)]) == 0
    header, records = read_embeddings(embeddings)
    assert header['dim'] == 8 and len(records) == 4

    assert main(['similarity', '--checkpoint', checkpoint, '--out', str(tmp_path / 'X.txt')]) == 0
    assert np.loadtxt(tmp_path / 'X.txt').shape == (2, 2)

    assert main(['plot', '--tables', str(table_path), '--out', str(tmp_path / 'curves.png')]) == 0
    assert (tmp_path / 'curves.png').exists()


def test_bad_config_is_reported(tmp_path, capsys):
    path = tmp_path / 'config.json'
    path.write_text('{"train": {"batch_size": 5, "groups": 2}}')
    assert main(['train', '--config', str(path), '--out', str(tmp_path / 'run')]) == 2
    assert 'divisible' in capsys.readouterr().err


def test_number_lists():
    args = build_parser().parse_args(['eval', '--checkpoint', 'c.pt', '--snr-grid', '0,6.5', '--seeds', '1,2',
                                      '--out', 'o'])
    assert args.snr_grid == [0.0, 6.5]
    assert args.seeds == [1, 2]
    with pytest.raises(SystemExit):
        build_parser().parse_args(['eval', '--checkpoint', 'c.pt', '--snr-grid', 'low', '--out', 'o'])
