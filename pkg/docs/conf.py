#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# Sphinx configuration for lastmile_utils.
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys
from importlib.metadata import version

from sphinx_pyproject import SphinxConfig

lastmile_utils_version = version("lastmile_utils")

config = SphinxConfig(
    "../pyproject.toml",
    globalns=globals(),
    config_overrides={"version": lastmile_utils_version, "release": lastmile_utils_version},
)

sys.path.insert(0, os.path.abspath(".."))


# -- General configuration ------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.coverage",
    "sphinx.ext.viewcode",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
    "pydata_sphinx_theme",
]

napoleon_google_docstring = False
napoleon_use_param = False
napoleon_use_ivar = True

source_suffix = ".rst"

# The master toctree document.
master_doc = "index"

project = "lastmile_utils"
language = "en"

exclude_patterns = [
    "_build",
    "Thumbs.db",
    ".DS_Store",
    "../tests",
]

pygments_style = "sphinx"
todo_include_todos = False


# -- Options for HTML output ----------------------------------------------

html_theme = "pydata_sphinx_theme"
html_theme_options = {
  "show_nav_level": 2
}

htmlhelp_basename = "lastmile_utilsdoc"


# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}

latex_documents = [
    (
        master_doc,
        "lastmile_utils.tex",
        "lastmile_utils Documentation",
        "lastmile_utils developers",
        "manual",
    )
]


# -- Options for manual page output ---------------------------------------

man_pages = [(master_doc, "lastmile_utils", "lastmile_utils Documentation", ["lastmile_utils developers"], 1)]
