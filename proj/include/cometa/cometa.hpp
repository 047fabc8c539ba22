#pragma once

#include "cometa/beg.hpp"
#include "cometa/checkpoint.hpp"
#include "cometa/config.hpp"
#include "cometa/data.hpp"
#include "cometa/generator.hpp"
#include "cometa/graph.hpp"
#include "cometa/metrics.hpp"
#include "cometa/model.hpp"
#include "cometa/optim.hpp"
#include "cometa/protocol.hpp"
#include "cometa/report.hpp"
#include "cometa/seg.hpp"
#include "cometa/split.hpp"
#include "cometa/synth.hpp"
#include "cometa/tensor.hpp"
