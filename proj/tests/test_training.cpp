#include <catch2/catch_amalgamated.hpp>
#include "translob/translob.hpp"
