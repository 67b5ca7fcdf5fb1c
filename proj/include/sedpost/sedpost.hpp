#pragma once

// Umbrella header.

#include "sedpost/bpn.hpp"
#include "sedpost/call_stats.hpp"
#include "sedpost/core.hpp"
#include "sedpost/errors.hpp"
#include "sedpost/evalkit.hpp"
#include "sedpost/eventpost.hpp"
#include "sedpost/framepost.hpp"
#include "sedpost/hypersearch.hpp"
#include "sedpost/ingest.hpp"
#include "sedpost/json_io.hpp"
#include "sedpost/parallel.hpp"
#include "sedpost/pipeline.hpp"
