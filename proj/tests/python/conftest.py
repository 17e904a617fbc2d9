import os
import sys

# Under ctest the module comes from the build tree; an editable install would otherwise
# redirect the import to its own copy.
if os.environ.get("CREL_EXPECT_MODULE_DIR"):
    sys.meta_path[:] = [f for f in sys.meta_path if type(f).__name__ != "ScikitBuildRedirectingFinder"]
