#include "colearn/ensemble.hpp"

namespace colearn {

std::string to_string(Combiner c) {
    switch (c) {
        case Combiner::arithmetic:
            return "arithmetic";
        case Combiner::geometric:
            return "geometric";
        case Combiner::majority:
            return "majority";
    }
    return "unknown";
}

Combiner combiner_from_string(const std::string& name) {
    for (Combiner c : kAllCombiners)
        if (to_string(c) == name) return c;
    throw std::invalid_argument("unknown combiner '" + name + "'");
}

}  // namespace colearn
