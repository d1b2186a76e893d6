# Sphinx configuration for the nonneg-cl documentation.
# http://www.sphinx-doc.org/en/master/config

import os
import sys

sys.path.insert(0, os.path.abspath('..'))

from nonneg_cl import __version__  # noqa: E402

project = 'nonneg-cl'
copyright = 'nonneg-cl contributors'
release = __version__

title = 'Non-negative Contrastive Learning'
html_short_title = 'nonneg-cl'

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.intersphinx']

autodoc_member_order = 'bysource'

highlight_language = 'yaml'

html_show_sphinx = False

html_use_smartypants = True
html_copy_source = False

intersphinx_mapping = {
    'python3': ('https://docs.python.org/3/', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}

default_role = 'any'
