#pragma once

#include "core_model.hpp"
#include "parallel.hpp"
#include "ingestion.hpp"
#include "integrity.hpp"
#include "anomaly_detection.hpp"
#include "repair.hpp"
#include "peak_analytics.hpp"
#include "rank_metrics.hpp"
#include "serialization.hpp"
#include "synthetic.hpp"
#include "config.hpp"
#include "store.hpp"
#include "pipeline.hpp"
#include "evaluation.hpp"
#include "review_service.hpp"
