#pragma once

// Everything except the HTTP service (qalam/service.hpp), which pulls in
// the vendored HTTP and JSON headers.

#include "qalam/data.hpp"
#include "qalam/error.hpp"
#include "qalam/layers.hpp"
#include "qalam/metrics.hpp"
#include "qalam/network.hpp"
#include "qalam/optim.hpp"
#include "qalam/serialize.hpp"
#include "qalam/strokes.hpp"
#include "qalam/synthetic.hpp"
#include "qalam/tensor.hpp"
#include "qalam/train.hpp"
