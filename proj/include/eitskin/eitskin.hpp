#pragma once

#include "eitskin/bend.hpp"
#include "eitskin/classifier.hpp"
#include "eitskin/error.hpp"
#include "eitskin/forward.hpp"
#include "eitskin/mesh.hpp"
#include "eitskin/nn/layers.hpp"
#include "eitskin/nn/network.hpp"
#include "eitskin/nn/train.hpp"
#include "eitskin/phantom.hpp"
#include "eitskin/pipeline.hpp"
#include "eitskin/protocol.hpp"
#include "eitskin/reconstruction.hpp"
#include "eitskin/report.hpp"
#include "eitskin/scenario.hpp"
#include "eitskin/scenario_io.hpp"
#include "eitskin/world.hpp"
