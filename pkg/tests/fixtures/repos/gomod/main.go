package main

import "fmt"

func main() {
	fmt.Println(Sum([]int{1, 2, 3}))
}

func Sum(values []int) int {
	total := 0
	for _, v := range values {
		total += v
	}
	return total
}
