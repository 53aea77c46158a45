#pragma once

#include "report.hpp"
#include "runtime.hpp"
