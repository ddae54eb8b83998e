#pragma once

#include "streameval/errors.hpp"
#include "streameval/core.hpp"
#include "streameval/clock.hpp"
#include "streameval/stream.hpp"
#include "streameval/memory.hpp"
#include "streameval/backend.hpp"
#include "streameval/remote.hpp"
#include "streameval/speculative.hpp"
#include "streameval/protocol.hpp"
#include "streameval/judge.hpp"
#include "streameval/metrics.hpp"
#include "streameval/app.hpp"
