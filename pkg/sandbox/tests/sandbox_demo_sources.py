"""Canned function and test sources shared across the test suite.

These are small, self-contained demo programs: a weight-sampling function
with its validated test class, a data-file loader in pre-fix and fixed
variants with the test that separates them, and a refined variance function
with a full docstring. Tests use them as realistic pipeline inputs.
"""

DRAW_WEIGHTS_FUNCTION = 'import numpy as np\n\ndef drawWeights(size, distribution):\n    # Validate the size parameter\n    if not isinstance(size, (int, tuple)) or (isinstance(size, int) and size <= 0):\n        raise ValueError("Size must be a positive integer or a tuple of positive integers.")\n    \n    # Validate the distribution parameter\n    if distribution not in [\'lognormal\', \'normal\', \'uniform\']:\n        raise ValueError("Distribution must be one of \'lognormal\', \'normal\', or \'uniform\'.")\n    \n    weights = None\n    if distribution == \'lognormal\':\n        hyp = 1.0\n        m = np.log(0.2) + hyp\n        s = hyp\n        weights = (np.random.lognormal(m, s, size) * (255 / 20.0)).astype(int)\n    elif distribution == \'normal\':\n        m = 10\n        s = 5\n        weights = np.random.normal(m, s, size).astype(int)\n    elif distribution == \'uniform\':\n        weights = np.random.uniform(0, 255, size).astype(int)\n    \n    return weights\n'

DRAW_WEIGHTS_SUITE = "import unittest\nimport numpy as np\nclass TestCases(unittest.TestCase):\n    def test_lognormal_weights(self):\n        np.random.seed(42)\n        weights = drawWeights(10, 'lognormal')\n        self.assertIsInstance(weights, np.ndarray)\n        self.assertEqual(len(weights), 10)\n        self.assertTrue(all(0 <= w <= 255 for w in weights))\n    def test_normal_weights(self):\n        np.random.seed(42)\n        weights = drawWeights(10, 'normal')\n        self.assertIsInstance(weights, np.ndarray)\n        self.assertEqual(len(weights), 10)\n        self.assertTrue(all(-5 <= w <= 20 for w in weights))\n    def test_uniform_weights(self):\n        np.random.seed(42)\n        weights = drawWeights(10, 'uniform')\n        self.assertIsInstance(weights, np.ndarray)\n        self.assertEqual(len(weights), 10)\n        self.assertTrue(all(0 <= w <= 255 for w in weights))\n    def test_invalid_size(self):\n        with self.assertRaises(ValueError):\n            drawWeights(-1, 'lognormal')\n    def test_invalid_distribution(self):\n        with self.assertRaises(ValueError):\n            drawWeights(10, 'invalid_distribution')\n"

GET_VAR_REFINED = 'import numpy as np\n\ndef get_var(data):\n    """\n    Calculates the variance of a given list of numbers.\n    \n    Parameters:\n    - data (list of float or int): A list of numerical values for which to calculate the variance.\n    \n    Returns:\n    - float: The variance of the input data.\n    \n    Requirements:\n    - numpy\n    \n    Example:\n    >>> var = get_var([1, 2, 3, 4, 5])\n    >>> print(var)\n    2.0\n    """\n    # Calculate the mean of the data\n    mean = np.mean(data)\n    \n    # Calculate the variance using the formula: sum((x - mean)^2) / n\n    var = sum([np.power(x - mean, 2) for x in data]) / len(data)\n    \n    return var\n'

LOADER_FAILED_TEST_METHOD = 'def test_data_file_with_non_image_entries(self):\n    # Create a data file with non-image entries\n    mixed_data_file_path = os.path.join(self.test_dir, "mixed_data.txt")\n    with open(mixed_data_file_path, \'wt\') as f:\n        f.write("input_image3.png annotation_image3.png\\n")\n        f.write("non_image_data.txt\\n")\n    # Try to load the mixed data file\n    with self.assertRaises(ValueError):\n        _load_data_files(mixed_data_file_path)\n'

LOADER_FAIL_RESULT_JSON = '[\n    "fail",\n    {\n      "test_data_file_with_non_image_entries": "Traceback (most recent call last):\\n  File \\"__test__.py\\", line 140, in test_data_file_with_non_image_entries\\nAssertionError: ValueError not raised\\n",\n      "test_invalid_data_file_format": "Traceback (most recent call last):\\n  File \\"__test__.py\\", line 117, in test_invalid_data_file_format\\nAssertionError: ValueError not raised\\n"\n    }\n]'


LOADER_PRE_FIX = """\
import numpy as np
import os

def _load_data_files(data_file_path):
    input_path_list = []
    annotation_path_list = []
    if not os.path.exists(data_file_path):
        raise FileNotFoundError(f"Data file not found: {data_file_path}")
    data_folder_path = os.path.dirname(os.path.abspath(data_file_path))
    with open(data_file_path, 'rt') as f:
        for line in f:
            parts = line.strip().split(' ')
            if len(parts) != 2:
                continue
            input_path, annotation_path = parts
            full_input_path = os.path.join(data_folder_path, input_path)
            full_annotation_path = os.path.join(data_folder_path, annotation_path)
            if not os.path.exists(full_input_path) or not os.path.exists(full_annotation_path):
                continue
            input_path_list.append(full_input_path)
            annotation_path_list.append(full_annotation_path)
    return np.array(input_path_list), np.array(annotation_path_list)
"""

LOADER_FIXED = """\
import numpy as np
import os
import logging

def _load_data_files(data_file_path):
    input_path_list = []
    annotation_path_list = []
    # Check if the data file exists
    if not os.path.exists(data_file_path):
        logging.error(f"Data file not found: {data_file_path}")
        raise FileNotFoundError(f"Data file not found: {data_file_path}")
    data_folder_path = os.path.dirname(os.path.abspath(data_file_path))
    try:
        with open(data_file_path, 'rt') as f:
            for line in f:
                # Split the line into input and annotation paths
                parts = line.strip().split(' ')
                if len(parts) != 2:
                    logging.warning(f"Skipping invalid line: {line.strip()}")
                    raise ValueError(f"Invalid line format: {line.strip()}")
                input_path, annotation_path = parts
                # Construct full paths
                full_input_path = os.path.join(data_folder_path, input_path)
                full_annotation_path = os.path.join(data_folder_path, annotation_path)
                # Validate paths
                if not os.path.exists(full_input_path) or not os.path.exists(full_annotation_path):
                    logging.warning(f"Skipping non-existent paths: {full_input_path} or {full_annotation_path}")
                    raise ValueError(f"Non-existent paths: {full_input_path} or {full_annotation_path}")
                input_path_list.append(full_input_path)
                annotation_path_list.append(full_annotation_path)
    except Exception as e:
        logging.error(f"Error reading data file: {e}")
        raise
    return np.array(input_path_list), np.array(annotation_path_list)
"""

_INDENTED_FAILED_TEST = "\n".join(
    ("    " + line if line.strip() else line)
    for line in LOADER_FAILED_TEST_METHOD.splitlines()
)

LOADER_SUITE = (
    """\
import unittest
import os
import tempfile
import shutil

class TestCases(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

"""
    + _INDENTED_FAILED_TEST
    + "\n"
)
