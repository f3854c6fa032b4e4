#pragma once

// c10 defines its own CHECK macro; pull torch in first and let doctest's win.
#include <torch/torch.h>
#undef CHECK

#include "doctest.h"
