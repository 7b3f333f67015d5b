#include <cstdio>

int main() {
    std::puts("cfbench: subcommands not wired up yet");
    return 0;
}
