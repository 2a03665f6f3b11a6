#pragma once

#include "capow/error.hpp"
#include "capow/flow_ingest.hpp"
#include "capow/cluster_models.hpp"
#include "capow/policy.hpp"
#include "capow/pow.hpp"
#include "capow/model_io.hpp"
#include "capow/protocol.hpp"
#include "capow/net.hpp"
#include "capow/gate.hpp"
#include "capow/train.hpp"
#include "capow/report.hpp"
#include "capow/simulate.hpp"
#include "capow/synth.hpp"
