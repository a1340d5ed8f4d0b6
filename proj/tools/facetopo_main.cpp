#include <cstdio>

int main() {
    std::puts("facetopo: placeholder");
    return 0;
}
