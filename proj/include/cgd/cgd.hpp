#pragma once

#include "cgd/backend.hpp"
#include "cgd/core.hpp"
#include "cgd/corpus.hpp"
#include "cgd/engine.hpp"
#include "cgd/error.hpp"
#include "cgd/eval.hpp"
#include "cgd/mock_backend.hpp"
#include "cgd/remote_backend.hpp"
#include "cgd/scoring.hpp"
#include "cgd/serialize.hpp"
#include "cgd/wire.hpp"
