import pytest

from deidaudit.names import default_catalog
from deidaudit.templates import generate_corpus, load_template_dir

BUNDLED_TEMPLATES = "src/deidaudit/data/templates"


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def bundled_templates():
    import deidaudit.data

    from importlib import resources

    with resources.as_file(
        resources.files("deidaudit.data").joinpath("templates")
    ) as path:
        return load_template_dir(path)


@pytest.fixture(scope="session")
def small_corpus(catalog, bundled_templates):
    """Two reps over the bundled templates: 320 notes."""
    return generate_corpus(catalog, bundled_templates, reps=2, global_seed=99)
