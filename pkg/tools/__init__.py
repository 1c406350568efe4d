# Tools package