import os
import sys

# Under ctest, test the in-tree build rather than whatever an editable install redirects to.
_build = os.environ.get("ZDMIX_EXPECT_DIR")
if _build:
    sys.meta_path[:] = [f for f in sys.meta_path if "zdmix" not in type(f).__module__]
    sys.path.insert(0, os.path.dirname(_build))
