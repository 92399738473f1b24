#pragma once

// c10 logging defines its own CHECK
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>
