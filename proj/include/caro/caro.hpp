#pragma once

// Umbrella header for the caro library.

#include "caro/common.hpp"
#include "caro/config.hpp"
#include "caro/confusion.hpp"
#include "caro/dataset.hpp"
#include "caro/embedding.hpp"
#include "caro/gateway.hpp"
#include "caro/grader.hpp"
#include "caro/metrics.hpp"
#include "caro/openai.hpp"
#include "caro/orchestrator.hpp"
#include "caro/reflection.hpp"
#include "caro/rubric.hpp"
#include "caro/search.hpp"
#include "caro/testbed.hpp"
